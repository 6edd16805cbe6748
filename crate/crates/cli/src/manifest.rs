//! Experiment manifest parsing.
//!
//! A manifest is a TOML file describing the scenario × variant × source ×
//! trial matrix plus optional overrides for the survey grid, the signal
//! field, the robots, and the model-fitting knobs. Unknown keys are
//! rejected so typos fail loudly instead of silently running defaults.
//!
//! Minimal example:
//!
//! ```toml
//! scenarios = ["sweep_single", "walk_single"]
//! variants = ["alpha75", "max_var", "baseline"]
//! ```
//!
//! Every omitted setting falls back to the library defaults (10×15 grid with
//! 1 m pitch, path-loss exponent 3, shadowing variance 0.65, 500 s budget,
//! five sources, five trials per source).

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use infosample::acquisition::InfoVariant;
use infosample::sim::{
    RobotParams, Scenario, ScenarioConfig, SimError, TrialConfig,
};
use infosample::{FieldParams, GridSpec, LogBase, Point};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest is empty; required keys: scenarios (list of scenario names), variants (list of variant names)")]
    Empty,
    #[error("manifest syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("scenarios list is empty")]
    NoScenarios,
    #[error("variants list is empty")]
    NoVariants,
    #[error("scenario {0:?} appears more than once")]
    DuplicateScenario(String),
    #[error("variant {0:?} appears more than once; per-run output files would collide")]
    DuplicateVariant(String),
    #[error(
        "unknown variant {0:?}; expected one of alpha75, alpha50, alpha25, max_var, max_mean, \
         max_var_max_mean, baseline, sweep, random_walk, or an inline table such as \
         {{ alpha = 0.75, beta = 0.25 }}"
    )]
    UnknownVariant(String),
    #[error("variant weights must be nonnegative and sum to 1, got alpha={alpha} beta={beta}")]
    BadWeights { alpha: f64, beta: f64 },
    #[error(
        "alpha={alpha} beta={beta} is not one of the standard weightings; set \
         allow_custom_weights = true to run it anyway"
    )]
    CustomWeights { alpha: f64, beta: f64 },
    #[error("in {context}: {source}")]
    Invalid {
        context: String,
        #[source]
        source: SimError,
    },
}

/// One entry of the manifest's `variants` list. `Baseline` resolves to the
/// scenario's own non-adaptive reference (sweep or random walk) at
/// expansion time.
#[derive(Debug, Clone, PartialEq)]
pub enum VariantChoice {
    Fixed(InfoVariant),
    Baseline,
}

impl VariantChoice {
    /// The concrete strategy this choice runs under `scenario`.
    pub fn resolve(&self, scenario: Scenario) -> InfoVariant {
        match self {
            VariantChoice::Fixed(v) => v.clone(),
            VariantChoice::Baseline => scenario.baseline(),
        }
    }
}

/// A parsed, validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentManifest {
    pub scenarios: Vec<Scenario>,
    pub variants: Vec<VariantChoice>,
    pub sources: Vec<Point>,
    pub trials: u32,
    pub base_seed: u64,
    /// Robot start override applied to every scenario; `None` keeps each
    /// scenario's default formation.
    pub starts: Option<Vec<Point>>,
    pub output_dir: PathBuf,
    /// Worker threads for the run matrix; 0 chooses the core count.
    pub jobs: usize,
    pub plots: bool,
    pub grid: GridSpec,
    pub field: FieldParams,
    pub robot: RobotParams,
    pub planner: infosample::sim::PlannerParams,
    pub gp: infosample::sim::GpParams,
}

impl ExperimentManifest {
    /// Total runs the manifest expands to.
    pub fn run_count(&self) -> usize {
        self.scenarios.len() * self.variants.len() * self.sources.len() * self.trials as usize
    }

    /// One `ScenarioConfig` per scenario × variant pairing, in manifest
    /// order.
    pub fn scenario_configs(&self) -> Result<Vec<ScenarioConfig>, ManifestError> {
        let mut out = Vec::with_capacity(self.scenarios.len() * self.variants.len());
        for &scenario in &self.scenarios {
            for choice in &self.variants {
                let strategy = choice.resolve(scenario);
                let mut sc = ScenarioConfig::new(scenario, strategy);
                sc.grid = self.grid;
                sc.field = self.field;
                sc.sources = self.sources.clone();
                sc.trials = self.trials;
                sc.base_seed = self.base_seed;
                if let Some(starts) = &self.starts {
                    sc.starts = starts.clone();
                }
                sc.robot = self.robot;
                sc.planner = self.planner;
                sc.gp = self.gp;
                sc.validate().map_err(|source| ManifestError::Invalid {
                    context: format!(
                        "scenario {} / variant {}",
                        scenario.label(),
                        sc.strategy.label()
                    ),
                    source,
                })?;
                out.push(sc);
            }
        }
        Ok(out)
    }

    /// The fully expanded run matrix, in deterministic manifest order.
    pub fn trial_configs(&self) -> Result<Vec<TrialConfig>, ManifestError> {
        let mut out = Vec::with_capacity(self.run_count());
        for sc in self.scenario_configs()? {
            let trials = sc.expand().map_err(|source| ManifestError::Invalid {
                context: format!(
                    "scenario {} / variant {}",
                    sc.scenario.label(),
                    sc.strategy.label()
                ),
                source,
            })?;
            out.extend(trials);
        }
        Ok(out)
    }
}

/// Reads and validates a manifest file.
pub fn parse_manifest(path: &Path) -> Result<ExperimentManifest, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest_str(&text)
}

/// Parses manifest text. Split out from [`parse_manifest`] so tests can
/// exercise parsing without touching the filesystem.
pub fn parse_manifest_str(text: &str) -> Result<ExperimentManifest, ManifestError> {
    if text.trim().is_empty() {
        return Err(ManifestError::Empty);
    }
    let file: ManifestFile = toml::from_str(text)?;
    file.resolve()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    scenarios: Vec<Scenario>,
    variants: Vec<VariantSpec>,
    sources: Option<Vec<[f64; 2]>>,
    trials: Option<u32>,
    base_seed: Option<u64>,
    starts: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    allow_custom_weights: bool,
    output: Option<OutputTable>,
    grid: Option<GridTable>,
    field: Option<FieldTable>,
    robot: Option<RobotTable>,
    planner: Option<PlannerTable>,
    gp: Option<GpTable>,
}

/// A `variants` entry: either a well-known name or an inline table giving
/// explicit weights or an explicit switching threshold.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum VariantSpec {
    Name(String),
    Weighted { alpha: f64, beta: f64 },
    Switching { variance_threshold: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputTable {
    directory: Option<PathBuf>,
    jobs: Option<usize>,
    plots: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridTable {
    width_m: Option<f64>,
    height_m: Option<f64>,
    cell_pitch_m: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldTable {
    tx_power_dbm: Option<f64>,
    frequency_hz: Option<f64>,
    path_loss_exponent: Option<f64>,
    shadowing_variance: Option<f64>,
    log_base: Option<LogBase>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotTable {
    speed_mps: Option<f64>,
    sample_time_s: Option<f64>,
    budget_s: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlannerTable {
    sweep_row_spacing_m: Option<f64>,
    walk_step_cells: Option<u32>,
    initial_walk_samples: Option<u32>,
    region_seed_samples: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GpTable {
    refit_every: Option<u32>,
    first_fit_restarts: Option<u32>,
    refit_restarts: Option<u32>,
    refit_max_iters: Option<u32>,
    initial: Option<infosample::Hyperparams>,
}

/// The variant names accepted in a manifest, with their meanings.
const VARIANT_NAMES: &[(&str, fn() -> InfoVariant)] = &[
    ("alpha75", InfoVariant::alpha75),
    ("alpha50", InfoVariant::alpha50),
    ("alpha25", InfoVariant::alpha25),
    ("max_var", InfoVariant::max_var),
    ("max_mean", InfoVariant::max_mean),
];

impl VariantSpec {
    fn resolve(&self, allow_custom: bool) -> Result<VariantChoice, ManifestError> {
        match self {
            VariantSpec::Name(name) => {
                if let Some((_, ctor)) = VARIANT_NAMES.iter().find(|(n, _)| n == name) {
                    return Ok(VariantChoice::Fixed(ctor()));
                }
                match name.as_str() {
                    "max_var_max_mean" => Ok(VariantChoice::Fixed(
                        InfoVariant::max_var_max_mean(
                            infosample::acquisition::DEFAULT_VARIANCE_THRESHOLD,
                        )
                        .expect("default threshold is positive"),
                    )),
                    "baseline" => Ok(VariantChoice::Baseline),
                    "sweep" => Ok(VariantChoice::Fixed(InfoVariant::Sweep)),
                    "random_walk" => Ok(VariantChoice::Fixed(InfoVariant::RandomWalk)),
                    other => Err(ManifestError::UnknownVariant(other.to_string())),
                }
            }
            VariantSpec::Weighted { alpha, beta } => {
                let v = InfoVariant::weighted(*alpha, *beta).map_err(|_| {
                    ManifestError::BadWeights {
                        alpha: *alpha,
                        beta: *beta,
                    }
                })?;
                if !v.has_standard_weights() && !allow_custom {
                    return Err(ManifestError::CustomWeights {
                        alpha: *alpha,
                        beta: *beta,
                    });
                }
                Ok(VariantChoice::Fixed(v))
            }
            VariantSpec::Switching { variance_threshold } => {
                let v = InfoVariant::max_var_max_mean(*variance_threshold).map_err(|_| {
                    ManifestError::Invalid {
                        context: "variants".into(),
                        source: SimError::InvalidConfig(format!(
                            "variance threshold must be positive, got {variance_threshold}"
                        )),
                    }
                })?;
                Ok(VariantChoice::Fixed(v))
            }
        }
    }
}

impl ManifestFile {
    fn resolve(self) -> Result<ExperimentManifest, ManifestError> {
        if self.scenarios.is_empty() {
            return Err(ManifestError::NoScenarios);
        }
        if self.variants.is_empty() {
            return Err(ManifestError::NoVariants);
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            if self.scenarios[..i].contains(s) {
                return Err(ManifestError::DuplicateScenario(s.label().to_string()));
            }
        }

        let variants = self
            .variants
            .iter()
            .map(|spec| spec.resolve(self.allow_custom_weights))
            .collect::<Result<Vec<_>, _>>()?;
        // Labels key the per-run output files, so they must be unique.
        // `Baseline` can never collide with a fixed sweep/walk entry under
        // every scenario at once, but two entries with the same label can.
        let mut labels: Vec<String> = Vec::new();
        for choice in &variants {
            let label = match choice {
                VariantChoice::Fixed(v) => v.label(),
                VariantChoice::Baseline => "baseline".to_string(),
            };
            if labels.contains(&label) {
                return Err(ManifestError::DuplicateVariant(label));
            }
            labels.push(label);
        }
        for (i, choice) in variants.iter().enumerate() {
            // A fixed sweep/walk entry next to `baseline` collides in every
            // scenario where the baseline resolves to the same strategy.
            if let VariantChoice::Fixed(v @ (InfoVariant::Sweep | InfoVariant::RandomWalk)) =
                choice
            {
                let shadowed = variants[..i].contains(&VariantChoice::Baseline)
                    || variants[i + 1..].contains(&VariantChoice::Baseline);
                if shadowed && self.scenarios.iter().any(|s| s.baseline() == *v) {
                    return Err(ManifestError::DuplicateVariant(v.label()));
                }
            }
        }

        let mut grid = GridSpec::default();
        if let Some(g) = &self.grid {
            if let Some(w) = g.width_m {
                grid.width_m = w;
            }
            if let Some(h) = g.height_m {
                grid.height_m = h;
            }
            if let Some(p) = g.cell_pitch_m {
                grid.cell_pitch_m = p;
            }
        }

        let mut field = FieldParams::default();
        if let Some(f) = &self.field {
            if let Some(v) = f.tx_power_dbm {
                field.tx_power_dbm = v;
            }
            if let Some(v) = f.frequency_hz {
                field.frequency_hz = v;
            }
            if let Some(v) = f.path_loss_exponent {
                field.path_loss_exponent = v;
            }
            if let Some(v) = f.shadowing_variance {
                field.shadowing_variance = v;
            }
            if let Some(v) = f.log_base {
                field.log_base = v;
            }
        }

        let mut robot = RobotParams::default();
        if let Some(r) = &self.robot {
            if let Some(v) = r.speed_mps {
                robot.speed_mps = v;
            }
            if let Some(v) = r.sample_time_s {
                robot.sample_time_s = v;
            }
            if let Some(v) = r.budget_s {
                robot.budget_s = v;
            }
        }

        let mut planner = infosample::sim::PlannerParams::default();
        if let Some(p) = &self.planner {
            if let Some(v) = p.sweep_row_spacing_m {
                planner.sweep_row_spacing_m = v;
            }
            if let Some(v) = p.walk_step_cells {
                planner.walk_step_cells = v;
            }
            if let Some(v) = p.initial_walk_samples {
                planner.initial_walk_samples = v;
            }
            if let Some(v) = p.region_seed_samples {
                planner.region_seed_samples = v;
            }
        }

        let mut gp = infosample::sim::GpParams::default();
        if let Some(g) = &self.gp {
            if let Some(v) = g.refit_every {
                gp.refit_every = v;
            }
            if let Some(v) = g.first_fit_restarts {
                gp.first_fit_restarts = v;
            }
            if let Some(v) = g.refit_restarts {
                gp.refit_restarts = v;
            }
            if let Some(v) = g.refit_max_iters {
                gp.refit_max_iters = v;
            }
            if let Some(v) = g.initial {
                gp.initial = v;
            }
        }

        let sources = match &self.sources {
            Some(list) => list.iter().map(|[x, y]| Point::new(*x, *y)).collect(),
            None => infosample::sim::default_sources(),
        };
        let starts = self
            .starts
            .as_ref()
            .map(|list| list.iter().map(|[x, y]| Point::new(*x, *y)).collect());

        let output = self.output.as_ref();
        let manifest = ExperimentManifest {
            scenarios: self.scenarios,
            variants,
            sources,
            trials: self.trials.unwrap_or(5),
            base_seed: self.base_seed.unwrap_or(infosample::sim::DEFAULT_BASE_SEED),
            starts,
            output_dir: output
                .and_then(|o| o.directory.clone())
                .unwrap_or_else(|| PathBuf::from("results")),
            jobs: output.and_then(|o| o.jobs).unwrap_or(0),
            plots: output.and_then(|o| o.plots).unwrap_or(true),
            grid,
            field,
            robot,
            planner,
            gp,
        };
        // Surface bad geometry and bad parameters at parse time rather than
        // halfway through a batch.
        manifest.scenario_configs()?;
        Ok(manifest)
    }
}
