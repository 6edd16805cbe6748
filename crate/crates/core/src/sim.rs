//! Trial execution: one deterministic simulation run from config to log.
//!
//! A trial generates a frozen ground-truth field, places one or more robots,
//! and then alternates between an initial scripted phase (a serpentine sweep
//! or a batch of random samples) and adaptive target selection driven by the
//! Gaussian-process posterior. Every sample updates the shared model, and a
//! [`StepRecord`] with mapping metrics is appended per sample.
//!
//! Multi-robot trials interleave robots by arrival time: the earliest
//! in-flight sample (ties by robot id) is committed to the model, and that
//! robot immediately picks its next target using the freshly updated
//! posterior. Decisions therefore only ever see measurements from their own
//! simulated past, and the log's timestamps are nondecreasing.

use std::collections::VecDeque;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{self, AcquisitionError, InfoVariant};
use crate::field::{self, FieldError, FieldParams, GroundTruthField};
use crate::gp::{
    fit_hyperparams, log_marginal_likelihood, FitOptions, GpError, Hyperparams, OnlinePosterior,
    MeanPolicy, Prediction, TrainingSet,
};
use crate::grid::{GridError, GridSpec, Point};
use crate::metrics;
use crate::partition::{PartitionError, PartitionMode, Partitioner};
use crate::planner::{
    random_walk_step, random_walk_step_in, sweep_waypoints, AdvanceOutcome, RobotState,
};

/// Default base seed for experiment expansion.
pub const DEFAULT_BASE_SEED: u64 = 2;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

/// The four experiment layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// One robot that first covers the area with a serpentine sweep.
    SweepSingle,
    /// One robot that first gathers samples by random walk.
    WalkSingle,
    /// Three robots with Voronoi regions frozen at the start positions.
    FixedVoronoi,
    /// Three robots with Voronoi regions recomputed at every decision.
    DynamicVoronoi,
}

impl Scenario {
    pub fn is_multi_robot(&self) -> bool {
        matches!(self, Scenario::FixedVoronoi | Scenario::DynamicVoronoi)
    }

    pub fn partition_mode(&self) -> Option<PartitionMode> {
        match self {
            Scenario::FixedVoronoi => Some(PartitionMode::Fixed),
            Scenario::DynamicVoronoi => Some(PartitionMode::Dynamic),
            _ => None,
        }
    }

    /// The non-adaptive reference strategy for this layout.
    pub fn baseline(&self) -> InfoVariant {
        match self {
            Scenario::SweepSingle => InfoVariant::Sweep,
            _ => InfoVariant::RandomWalk,
        }
    }

    /// Start positions used when a config does not override them. They place
    /// the single robot at the bottom center of the default survey area and
    /// the three-robot team at spread interior cells.
    pub fn default_starts(&self) -> Vec<Point> {
        if self.is_multi_robot() {
            vec![
                Point::new(3.0, 2.0),
                Point::new(3.0, 10.0),
                Point::new(7.0, 7.0),
            ]
        } else {
            vec![Point::new(4.5, 0.0)]
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Scenario::SweepSingle => "sweep_single",
            Scenario::WalkSingle => "walk_single",
            Scenario::FixedVoronoi => "fixed_voronoi",
            Scenario::DynamicVoronoi => "dynamic_voronoi",
        }
    }
}

/// Motion and budget parameters shared by every robot in a trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    pub speed_mps: f64,
    /// Dwell time consumed by each measurement, seconds.
    pub sample_time_s: f64,
    /// Per-robot time budget, seconds; travel and sampling both draw on it.
    pub budget_s: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        RobotParams {
            speed_mps: 1.0,
            sample_time_s: 1.0,
            budget_s: 500.0,
        }
    }
}

/// Parameters of the scripted (non-adaptive) motion phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    /// Vertical spacing between sweep rows, meters.
    pub sweep_row_spacing_m: f64,
    /// Cells moved per random-walk step.
    pub walk_step_cells: u32,
    /// Random-walk samples a single robot takes before adaptive selection.
    pub initial_walk_samples: u32,
    /// Random in-region samples each team robot takes before adaptive
    /// selection.
    pub region_seed_samples: u32,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            sweep_row_spacing_m: 3.0,
            walk_step_cells: 3,
            initial_walk_samples: 15,
            region_seed_samples: 5,
        }
    }
}

/// Model-update policy for the shared Gaussian process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    /// Hyperparameters used before the first refit.
    pub initial: Hyperparams,
    /// Hyperparameters are re-optimized every this many samples; between
    /// refits only the posterior factorization is rebuilt.
    pub refit_every: u32,
    /// Random restarts for the first hyperparameter fit.
    pub first_fit_restarts: u32,
    /// Random restarts for later refits (they warm-start from the previous
    /// optimum).
    pub refit_restarts: u32,
    /// Iteration cap for warm refits; the first fit always gets the full
    /// default budget. Lowering this trades hyperparameter tracking quality
    /// for speed.
    pub refit_max_iters: u32,
    pub mean_policy: MeanPolicy,
}

impl Default for GpParams {
    fn default() -> Self {
        GpParams {
            initial: Hyperparams::default(),
            refit_every: 10,
            first_fit_restarts: 3,
            refit_restarts: 0,
            refit_max_iters: 100,
            mean_policy: MeanPolicy::TrainingMean,
        }
    }
}

/// Source positions exercised by the default experiment matrix: the middle
/// of the survey area plus its four corner cells.
pub fn default_sources() -> Vec<Point> {
    vec![
        Point::new(4.0, 7.0),
        Point::new(0.0, 0.0),
        Point::new(9.0, 0.0),
        Point::new(0.0, 14.0),
        Point::new(9.0, 14.0),
    ]
}

/// One scenario/strategy pairing plus the source and repetition axes it
/// expands over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub strategy: InfoVariant,
    pub grid: GridSpec,
    /// Propagation model template; the source is overridden per expansion.
    pub field: FieldParams,
    pub sources: Vec<Point>,
    /// Trials per source.
    pub trials: u32,
    pub base_seed: u64,
    pub starts: Vec<Point>,
    pub robot: RobotParams,
    pub planner: PlannerParams,
    pub gp: GpParams,
}

impl ScenarioConfig {
    /// A full default configuration for one scenario/strategy pairing.
    pub fn new(scenario: Scenario, strategy: InfoVariant) -> Self {
        ScenarioConfig {
            scenario,
            strategy,
            grid: GridSpec::default(),
            field: FieldParams::default(),
            sources: default_sources(),
            trials: 5,
            base_seed: DEFAULT_BASE_SEED,
            starts: scenario.default_starts(),
            robot: RobotParams::default(),
            planner: PlannerParams::default(),
            gp: GpParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.grid.validate()?;
        self.field.validate()?;
        if self.trials == 0 {
            return Err(SimError::InvalidConfig("trials must be at least 1".into()));
        }
        if self.sources.is_empty() {
            return Err(SimError::InvalidConfig("no source positions given".into()));
        }
        for s in &self.sources {
            if !self.grid.contains(*s) {
                return Err(SimError::InvalidConfig(format!(
                    "source ({}, {}) lies outside the survey area",
                    s.x, s.y
                )));
            }
        }
        validate_run_params(
            self.scenario,
            &self.strategy,
            &self.grid,
            &self.starts,
            &self.robot,
            &self.planner,
            &self.gp,
        )
    }

    /// Expands into one [`TrialConfig`] per (source, trial) pair. The trial
    /// seed depends only on the base seed and those two indices, so every
    /// scenario/strategy pairing sees the same family of fields and initial
    /// randomness — comparisons across strategies are paired by seed.
    pub fn expand(&self) -> Result<Vec<TrialConfig>, SimError> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.sources.len() * self.trials as usize);
        for (si, source) in self.sources.iter().enumerate() {
            for ti in 0..self.trials {
                out.push(TrialConfig {
                    scenario: self.scenario,
                    strategy: self.strategy.clone(),
                    grid: self.grid,
                    field: FieldParams {
                        source: *source,
                        ..self.field
                    },
                    starts: self.starts.clone(),
                    robot: self.robot,
                    planner: self.planner,
                    gp: self.gp,
                    source_index: si as u32,
                    trial_index: ti,
                    seed: derive_trial_seed(self.base_seed, si as u32, ti),
                });
            }
        }
        Ok(out)
    }
}

/// A single fully-specified run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub scenario: Scenario,
    pub strategy: InfoVariant,
    pub grid: GridSpec,
    pub field: FieldParams,
    pub starts: Vec<Point>,
    pub robot: RobotParams,
    pub planner: PlannerParams,
    pub gp: GpParams,
    /// Position of this trial's source in the experiment's source list.
    pub source_index: u32,
    /// Repetition index under this source.
    pub trial_index: u32,
    pub seed: u64,
}

impl TrialConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.grid.validate()?;
        self.field.validate()?;
        if !self.grid.contains(self.field.source) {
            return Err(SimError::InvalidConfig(format!(
                "source ({}, {}) lies outside the survey area",
                self.field.source.x, self.field.source.y
            )));
        }
        validate_run_params(
            self.scenario,
            &self.strategy,
            &self.grid,
            &self.starts,
            &self.robot,
            &self.planner,
            &self.gp,
        )
    }

    /// Stable identifier used for per-run output file names.
    pub fn file_stem(&self) -> String {
        format!(
            "{}_{}_src{}_t{}",
            self.scenario.label(),
            self.strategy.label(),
            self.source_index,
            self.trial_index
        )
    }
}

fn validate_run_params(
    scenario: Scenario,
    strategy: &InfoVariant,
    grid: &GridSpec,
    starts: &[Point],
    robot: &RobotParams,
    planner: &PlannerParams,
    gp: &GpParams,
) -> Result<(), SimError> {
    match strategy {
        InfoVariant::Sweep if scenario != Scenario::SweepSingle => {
            return Err(SimError::InvalidConfig(
                "the sweep baseline only applies to the sweep_single scenario".into(),
            ));
        }
        InfoVariant::RandomWalk if scenario == Scenario::SweepSingle => {
            return Err(SimError::InvalidConfig(
                "the random-walk baseline does not apply to the sweep_single scenario".into(),
            ));
        }
        InfoVariant::Weighted { alpha, beta } => {
            let simplex = alpha.is_finite()
                && beta.is_finite()
                && (0.0..=1.0).contains(alpha)
                && (0.0..=1.0).contains(beta)
                && (alpha + beta - 1.0).abs() <= 1e-9;
            if !simplex {
                return Err(SimError::InvalidConfig(format!(
                    "weights must be nonnegative and sum to 1, got alpha={alpha} beta={beta}"
                )));
            }
        }
        InfoVariant::MaxVarMaxMean { variance_threshold } => {
            if !(variance_threshold.is_finite() && *variance_threshold > 0.0) {
                return Err(SimError::InvalidConfig(format!(
                    "variance threshold must be positive, got {variance_threshold}"
                )));
            }
        }
        _ => {}
    }

    if starts.is_empty() {
        return Err(SimError::InvalidConfig("no start positions given".into()));
    }
    if scenario.is_multi_robot() && starts.len() < 2 {
        return Err(SimError::InvalidConfig(
            "multi-robot scenarios need at least two start positions".into(),
        ));
    }
    if !scenario.is_multi_robot() && starts.len() != 1 {
        return Err(SimError::InvalidConfig(
            "single-robot scenarios take exactly one start position".into(),
        ));
    }
    for s in starts {
        if !grid.contains(*s) {
            return Err(SimError::InvalidConfig(format!(
                "start ({}, {}) lies outside the survey area",
                s.x, s.y
            )));
        }
    }

    if !(robot.speed_mps.is_finite() && robot.speed_mps > 0.0) {
        return Err(SimError::InvalidConfig("robot speed must be positive".into()));
    }
    if !(robot.sample_time_s.is_finite() && robot.sample_time_s > 0.0) {
        return Err(SimError::InvalidConfig(
            "sample time must be positive so a parked robot cannot sample forever".into(),
        ));
    }
    if !(robot.budget_s.is_finite() && robot.budget_s > 0.0) {
        return Err(SimError::InvalidConfig("time budget must be positive".into()));
    }

    if !(planner.sweep_row_spacing_m.is_finite() && planner.sweep_row_spacing_m > 0.0) {
        return Err(SimError::InvalidConfig("sweep row spacing must be positive".into()));
    }
    if planner.walk_step_cells == 0 {
        return Err(SimError::InvalidConfig("walk step must be at least one cell".into()));
    }
    let s = planner.walk_step_cells as usize;
    let walk_always_feasible = grid.nx() >= 2 * s + 1 || grid.ny() >= 2 * s + 1;
    if !walk_always_feasible {
        return Err(SimError::InvalidConfig(format!(
            "a {s}-cell walk step can strand the robot on a {}x{} grid",
            grid.nx(),
            grid.ny()
        )));
    }

    if gp.refit_every == 0 {
        return Err(SimError::InvalidConfig(
            "refit interval must be at least one sample".into(),
        ));
    }
    if gp.refit_max_iters == 0 {
        return Err(SimError::InvalidConfig(
            "refits need at least one optimizer iteration".into(),
        ));
    }
    Hyperparams::new(
        gp.initial.signal_variance,
        gp.initial.length_scale,
        gp.initial.noise_variance,
    )?;
    Ok(())
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-trial seed. It deliberately ignores the scenario and
/// strategy so that runs with the same (source, trial) indices share their
/// ground-truth field and scripted-phase randomness.
pub fn derive_trial_seed(base_seed: u64, source_index: u32, trial_index: u32) -> u64 {
    let mut s = splitmix64(base_seed);
    s = splitmix64(s ^ (u64::from(source_index).wrapping_mul(0xA24B_AED4_963E_E407)));
    splitmix64(s ^ (u64::from(trial_index).wrapping_mul(0x9FB2_1C65_1E98_DF25)))
}

/// Stream selector separating the run's own randomness (walk directions,
/// restart draws) from the field generator, which consumes the raw seed.
const RUN_STREAM: u64 = 0x5EED_0F0C_0DE5_EED5;

/// One sample and the map quality right after the model absorbed it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based sample index, counted over the whole team.
    pub step: u32,
    /// Simulated time at which the sample was taken, seconds.
    pub time_s: f64,
    pub robot_id: u32,
    pub x_m: f64,
    pub y_m: f64,
    /// Measured signal strength, dBm.
    pub rss_dbm: f64,
    /// Error of the predicted map against the frozen ground truth.
    pub rmse: f64,
    /// Average posterior variance over all cells.
    pub mean_var: f64,
    /// Distance traveled so far, summed over all robots, meters.
    pub cum_dist_m: f64,
    /// Whether the predicted-mean peak lies within 1 m of the true source.
    pub loc_correct: bool,
}

/// A hyperparameter refit that occurred after `step` samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefitEvent {
    pub step: u32,
    pub hyperparams: Hyperparams,
    pub log_marginal: f64,
}

/// Complete record of one run: per-sample metrics, refits, final robot
/// states, and the final predicted map next to the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub config: TrialConfig,
    pub records: Vec<StepRecord>,
    pub refits: Vec<RefitEvent>,
    pub robots: Vec<RobotState>,
    pub total_samples: u32,
    /// Frozen ground truth per cell, row-major, dBm.
    pub truth_dbm: Vec<f64>,
    /// Final posterior mean per cell, row-major, dBm.
    pub final_mean_dbm: Vec<f64>,
    /// Final posterior variance per cell, row-major.
    pub final_variance: Vec<f64>,
    pub final_rmse: f64,
    pub final_mean_var: f64,
    pub final_loc_error_m: f64,
    pub final_loc_correct: bool,
}

impl TrialLog {
    pub const CSV_HEADER: &'static str =
        "step,time_s,robot_id,x_m,y_m,rss_dbm,rmse,mean_var,cum_dist_m,loc_correct";

    /// Writes the step log as CSV, one row per sample.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.time_s,
                r.robot_id,
                r.x_m,
                r.y_m,
                r.rss_dbm,
                r.rmse,
                r.mean_var,
                r.cum_dist_m,
                r.loc_correct
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}

/// What a robot does when asked for its next target.
#[derive(Debug, Clone)]
enum Plan {
    /// Visit a fixed list of waypoints, then switch phases.
    Script { queue: VecDeque<Point>, then: AfterScript },
    /// Random-walk for a fixed number of samples, then turn adaptive.
    WalkInit { remaining: u32 },
    /// Random-walk for the whole budget (single-robot baseline).
    WalkForever,
    /// Random-walk confined to the robot's current region (team baseline).
    MaskedWalk,
    /// Pick the best-scoring cell in the robot's region.
    Adaptive,
    /// No further targets.
    Done,
}

#[derive(Debug, Clone, Copy)]
enum AfterScript {
    Adaptive,
    MaskedWalk,
    Done,
}

enum Action {
    Stop,
    Switch(Plan),
    PopScript,
    WalkCountdown,
    Walk,
    MaskedWalk,
    Adaptive,
}

/// A committed decision whose sample has not been taken yet.
#[derive(Debug, Clone, Copy)]
struct Pending {
    /// Time the robot committed to this move (it departs immediately).
    decided_at: f64,
    /// Time the sample at `target` completes: travel plus sampling time.
    arrival: f64,
    target: Point,
}

struct Engine<'a> {
    cfg: &'a TrialConfig,
    grid: GridSpec,
    cells: Vec<Point>,
    all_mask: Vec<bool>,
    field: GroundTruthField,
    truth: Vec<f64>,
    partitioner: Option<Partitioner>,
    robots: Vec<RobotState>,
    plans: Vec<Plan>,
    /// In-flight move per robot.
    pending: Vec<Option<Pending>>,
    rng: ChaCha8Rng,
    train: TrainingSet,
    hyper: Hyperparams,
    posterior: OnlinePosterior,
    latest: Prediction,
    first_fit_done: bool,
    step: u32,
    records: Vec<StepRecord>,
    refits: Vec<RefitEvent>,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a TrialConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let grid = cfg.grid;
        let cells = grid.cell_centers();
        let field = field::generate(&grid, &cfg.field, cfg.seed)?;
        let truth = field.values().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ RUN_STREAM));

        let robots: Vec<RobotState> = cfg
            .starts
            .iter()
            .enumerate()
            .map(|(i, &p)| RobotState::new(i, p, cfg.robot.speed_mps, cfg.robot.sample_time_s))
            .collect();

        let partitioner = match cfg.scenario.partition_mode() {
            Some(mode) => Some(Partitioner::new(mode, &grid, &cfg.starts)?),
            None => None,
        };

        let adaptive = cfg.strategy.is_adaptive();
        let mut plans = Vec::with_capacity(robots.len());
        match cfg.scenario {
            Scenario::SweepSingle => {
                let waypoints = sweep_waypoints(&grid, cfg.starts[0], cfg.planner.sweep_row_spacing_m);
                let then = if adaptive { AfterScript::Adaptive } else { AfterScript::Done };
                plans.push(Plan::Script {
                    queue: waypoints.into(),
                    then,
                });
            }
            Scenario::WalkSingle => {
                plans.push(if adaptive {
                    Plan::WalkInit {
                        remaining: cfg.planner.initial_walk_samples,
                    }
                } else {
                    Plan::WalkForever
                });
            }
            Scenario::FixedVoronoi | Scenario::DynamicVoronoi => {
                // Seed cells are drawn up front, per robot in id order, from
                // the partition induced by the start positions.
                let initial = partitioner
                    .as_ref()
                    .expect("multi-robot scenarios build a partitioner")
                    .partition(&cfg.starts)?;
                for r in 0..robots.len() {
                    let mask = initial.region_mask(r)?;
                    let mut pool: Vec<usize> =
                        (0..cells.len()).filter(|&i| mask[i]).collect();
                    let k = (cfg.planner.region_seed_samples as usize).min(pool.len());
                    let mut picks = VecDeque::with_capacity(k);
                    for i in 0..k {
                        let j = rng.random_range(i..pool.len());
                        pool.swap(i, j);
                        picks.push_back(cells[pool[i]]);
                    }
                    let then = if adaptive { AfterScript::Adaptive } else { AfterScript::MaskedWalk };
                    plans.push(Plan::Script { queue: picks, then });
                }
            }
        }

        let train = TrainingSet::new();
        let hyper = cfg.gp.initial;
        let posterior = OnlinePosterior::new(hyper, cfg.gp.mean_policy, cells.clone());
        let latest = posterior.predict();
        let pending = vec![None; robots.len()];
        Ok(Engine {
            cfg,
            grid,
            all_mask: vec![true; cells.len()],
            cells,
            field,
            truth,
            partitioner,
            robots,
            plans,
            pending,
            rng,
            train,
            hyper,
            posterior,
            latest,
            first_fit_done: false,
            step: 0,
            records: Vec::new(),
            refits: Vec::new(),
        })
    }

    /// Robot `j`'s physical position at simulated time `now`: its last
    /// sampling point, the en-route interpolation toward an in-flight target,
    /// or the target itself once travel has finished and sampling started.
    fn position_at(&self, j: usize, now: f64) -> Point {
        let anchor = self.robots[j].position;
        let Some(pending) = &self.pending[j] else {
            return anchor;
        };
        let distance = anchor.dist(pending.target);
        if distance == 0.0 {
            return pending.target;
        }
        let travel_end = pending.decided_at + distance / self.robots[j].speed;
        if now <= pending.decided_at {
            anchor
        } else if now >= travel_end {
            pending.target
        } else {
            let frac = (now - pending.decided_at) / (travel_end - pending.decided_at);
            Point::new(
                anchor.x + frac * (pending.target.x - anchor.x),
                anchor.y + frac * (pending.target.y - anchor.y),
            )
        }
    }

    /// Region mask for robot `r` at this moment, or `None` when the whole
    /// grid is available (single-robot runs). Dynamic partitions see every
    /// robot where it physically is right now, including mid-flight.
    fn current_mask(&self, r: usize) -> Result<Option<Vec<bool>>, SimError> {
        let Some(partitioner) = &self.partitioner else {
            return Ok(None);
        };
        let now = self.robots[r].time_used;
        let positions: Vec<Point> = (0..self.robots.len())
            .map(|j| self.position_at(j, now))
            .collect();
        let partition = partitioner.partition(&positions)?;
        Ok(Some(partition.region_mask(r)?))
    }

    /// Queues `target` for robot `r`, or retires the robot if the move does
    /// not fit in the remaining budget.
    fn propose(&mut self, r: usize, target: Point) {
        let state = &self.robots[r];
        let arrival = state.time_used + state.move_cost(target);
        if arrival > self.cfg.robot.budget_s {
            self.robots[r].exhausted = true;
            self.plans[r] = Plan::Done;
            self.pending[r] = None;
        } else {
            self.pending[r] = Some(Pending {
                decided_at: state.time_used,
                arrival,
                target,
            });
        }
    }

    /// Chooses robot `r`'s next target according to its current phase.
    fn decide_next(&mut self, r: usize) -> Result<(), SimError> {
        loop {
            let action = match &self.plans[r] {
                Plan::Done => Action::Stop,
                Plan::Script { queue, then } if queue.is_empty() => Action::Switch(match then {
                    AfterScript::Adaptive => Plan::Adaptive,
                    AfterScript::MaskedWalk => Plan::MaskedWalk,
                    AfterScript::Done => Plan::Done,
                }),
                Plan::Script { .. } => Action::PopScript,
                Plan::WalkInit { remaining: 0 } => Action::Switch(Plan::Adaptive),
                Plan::WalkInit { .. } => Action::WalkCountdown,
                Plan::WalkForever => Action::Walk,
                Plan::MaskedWalk => Action::MaskedWalk,
                Plan::Adaptive => Action::Adaptive,
            };
            match action {
                Action::Stop => {
                    self.pending[r] = None;
                    return Ok(());
                }
                Action::Switch(next) => {
                    self.plans[r] = next;
                    continue;
                }
                Action::PopScript => {
                    let target = match &mut self.plans[r] {
                        Plan::Script { queue, .. } => {
                            queue.pop_front().expect("non-empty checked above")
                        }
                        _ => unreachable!(),
                    };
                    self.propose(r, target);
                    return Ok(());
                }
                Action::WalkCountdown => {
                    if let Plan::WalkInit { remaining } = &mut self.plans[r] {
                        *remaining -= 1;
                    }
                    let target = random_walk_step(
                        &self.grid,
                        self.robots[r].position,
                        self.cfg.planner.walk_step_cells,
                        &mut self.rng,
                    );
                    self.propose(r, target);
                    return Ok(());
                }
                Action::Walk => {
                    let target = random_walk_step(
                        &self.grid,
                        self.robots[r].position,
                        self.cfg.planner.walk_step_cells,
                        &mut self.rng,
                    );
                    self.propose(r, target);
                    return Ok(());
                }
                Action::MaskedWalk => {
                    let mask = self.current_mask(r)?;
                    // A region too small for the step length degenerates to
                    // sampling in place; time still advances.
                    let target = random_walk_step_in(
                        &self.grid,
                        self.robots[r].position,
                        self.cfg.planner.walk_step_cells,
                        mask.as_deref(),
                        &mut self.rng,
                    )
                    .unwrap_or(self.robots[r].position);
                    self.propose(r, target);
                    return Ok(());
                }
                Action::Adaptive => {
                    let mask = self.current_mask(r)?;
                    let mask_ref: &[bool] = mask.as_deref().unwrap_or(&self.all_mask);
                    if !mask_ref.iter().any(|&b| b) {
                        // A robot whose region vanished samples in place.
                        let position = self.robots[r].position;
                        self.propose(r, position);
                        return Ok(());
                    }
                    let idx = acquisition::select_target(
                        &self.cfg.strategy,
                        &self.latest,
                        mask_ref,
                        &self.cells,
                        self.robots[r].position,
                    )?;
                    let target = self.cells[idx];
                    self.propose(r, target);
                    return Ok(());
                }
            }
        }
    }

    /// Executes robot `r`'s in-flight move: sample, model update, metrics.
    fn commit(&mut self, r: usize) -> Result<(), SimError> {
        let Pending {
            arrival, target, ..
        } = self.pending[r]
            .take()
            .expect("commit requires an in-flight target");
        match self.robots[r].advance(target, self.cfg.robot.budget_s) {
            AdvanceOutcome::Exhausted => {
                // propose() already checked the budget, so this is
                // unreachable in practice; retire the robot defensively.
                self.plans[r] = Plan::Done;
                return Ok(());
            }
            AdvanceOutcome::Moved { .. } => {}
        }
        debug_assert!((self.robots[r].time_used - arrival).abs() < 1e-9);

        let value = self.field.measure(target)?;
        self.train.push(target, value);
        self.posterior.add(target, value)?;
        self.step += 1;

        if self.step % self.cfg.gp.refit_every == 0 && self.train.len() >= 2 {
            let (restarts, max_iters) = if self.first_fit_done {
                (self.cfg.gp.refit_restarts, self.cfg.gp.refit_max_iters)
            } else {
                (
                    self.cfg.gp.first_fit_restarts,
                    FitOptions::default().max_iters,
                )
            };
            let opts = FitOptions {
                restarts,
                max_iters,
                length_scale_cap: Some(self.grid.diagonal()),
                ..FitOptions::default()
            };
            self.hyper = fit_hyperparams(&self.train, &self.hyper, &opts, &mut self.rng)?;
            self.first_fit_done = true;
            // Refits refactorize the posterior from scratch, which also stops
            // incremental roundoff from drifting across refit intervals.
            self.posterior.set_hyperparams(self.hyper)?;
            let lml = log_marginal_likelihood(&self.train, &self.hyper)?.value;
            self.refits.push(RefitEvent {
                step: self.step,
                hyperparams: self.hyper,
                log_marginal: lml,
            });
        }

        self.latest = self.posterior.predict();

        let rmse = metrics::rmse(&self.latest.mean, &self.truth);
        let mean_var = metrics::mean_variance(&self.latest.variance);
        let loc_correct =
            metrics::localization_correct(&self.grid, &self.latest.mean, self.cfg.field.source);
        let cum_dist_m: f64 = self.robots.iter().map(|s| s.cumulative_distance).sum();
        self.records.push(StepRecord {
            step: self.step,
            time_s: self.robots[r].time_used,
            robot_id: r as u32,
            x_m: target.x,
            y_m: target.y,
            rss_dbm: value,
            rmse,
            mean_var,
            cum_dist_m,
            loc_correct,
        });
        Ok(())
    }

    fn run(mut self) -> Result<TrialLog, SimError> {
        for r in 0..self.robots.len() {
            self.decide_next(r)?;
        }
        loop {
            let next = (0..self.robots.len())
                .filter_map(|r| self.pending[r].map(|p| (r, p.arrival)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let Some((r, _)) = next else { break };
            self.commit(r)?;
            self.decide_next(r)?;
        }

        let final_rmse = metrics::rmse(&self.latest.mean, &self.truth);
        let final_mean_var = metrics::mean_variance(&self.latest.variance);
        let final_loc_error_m =
            metrics::localization_error_m(&self.grid, &self.latest.mean, self.cfg.field.source);
        Ok(TrialLog {
            config: self.cfg.clone(),
            records: self.records,
            refits: self.refits,
            robots: self.robots,
            total_samples: self.step,
            truth_dbm: self.truth,
            final_mean_dbm: self.latest.mean,
            final_variance: self.latest.variance,
            final_rmse,
            final_mean_var,
            final_loc_error_m,
            final_loc_correct: final_loc_error_m <= metrics::LOCALIZATION_TOLERANCE_M,
        })
    }
}

/// Runs one trial to completion. The result is a pure function of the
/// config (including its seed): repeating the call reproduces the log
/// bit for bit.
pub fn run_trial(cfg: &TrialConfig) -> Result<TrialLog, SimError> {
    Engine::new(cfg)?.run()
}
