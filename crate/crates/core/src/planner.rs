//! Robot motion: serpentine sweeps, random walks and budgeted moves.
//!
//! Robots travel at constant speed, pay a fixed per-sample dwell time, and
//! stop once the next move no longer fits in the time budget. All sampling
//! positions are cell centers; the sweep and walk generators only emit cell
//! centers, and a robot started between centers snaps to the nearest one on
//! its first scripted step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{Cell, GridSpec, Point};

/// Kinematic and bookkeeping state of one robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub id: usize,
    pub position: Point,
    /// Total distance traveled, in meters.
    pub cumulative_distance: f64,
    pub samples_taken: u32,
    /// Simulated seconds consumed by travel and sampling.
    pub time_used: f64,
    /// Travel speed in m/s.
    pub speed: f64,
    /// Dwell time per sample, in seconds.
    pub sample_time: f64,
    /// Set once a move would exceed the budget; the robot then stays put.
    pub exhausted: bool,
}

/// Result of [`RobotState::advance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdvanceOutcome {
    /// The robot moved (possibly zero distance) and took a sample.
    Moved { cost_s: f64 },
    /// The move did not fit in the budget; the robot did not move.
    Exhausted,
}

impl RobotState {
    pub fn new(id: usize, position: Point, speed: f64, sample_time: f64) -> Self {
        assert!(speed > 0.0, "speed must be positive");
        assert!(sample_time >= 0.0, "sample time cannot be negative");
        RobotState {
            id,
            position,
            cumulative_distance: 0.0,
            samples_taken: 0,
            time_used: 0.0,
            speed,
            sample_time,
            exhausted: false,
        }
    }

    /// Time needed to travel to `target` and take one sample there.
    pub fn move_cost(&self, target: Point) -> f64 {
        self.position.dist(target) / self.speed + self.sample_time
    }

    /// Moves to `target` and samples there if the cost fits within `budget`
    /// seconds; otherwise marks the robot exhausted and leaves it in place.
    pub fn advance(&mut self, target: Point, budget: f64) -> AdvanceOutcome {
        let cost = self.move_cost(target);
        if self.time_used + cost > budget {
            self.exhausted = true;
            return AdvanceOutcome::Exhausted;
        }
        self.cumulative_distance += self.position.dist(target);
        self.position = target;
        self.time_used += cost;
        self.samples_taken += 1;
        AdvanceOutcome::Moved { cost_s: cost }
    }
}

/// Serpentine coverage waypoints over the grid's cell centers.
///
/// Rows are visited bottom-to-top every `row_spacing_m` (quantized to whole
/// rows, minimum one). Within a row every cell center is visited; the first
/// row runs toward the far end from `start`, and direction alternates on each
/// following row so consecutive waypoints always differ by one cell pitch in
/// x or one row spacing in y.
pub fn sweep_waypoints(grid: &GridSpec, start: Point, row_spacing_m: f64) -> Vec<Point> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let row_step = (row_spacing_m / grid.cell_pitch_m).round().max(1.0) as usize;
    let mut waypoints = Vec::new();
    // Begin at whichever end of the bottom row is nearer to the start.
    let mut left_to_right = start.x <= grid.cell_center(Cell::new(nx - 1, 0)).x / 2.0;
    let mut iy = 0;
    while iy < ny {
        let xs: Vec<usize> = if left_to_right {
            (0..nx).collect()
        } else {
            (0..nx).rev().collect()
        };
        for ix in xs {
            waypoints.push(grid.cell_center(Cell::new(ix, iy)));
        }
        left_to_right = !left_to_right;
        iy += row_step;
    }
    waypoints
}

/// One random-walk step of `step_cells` cell pitches in a cardinal direction.
///
/// The step starts from the cell nearest to `pos` and draws uniformly among
/// the directions that stay inside the grid, which matches rejection sampling
/// with a single RNG draw. Panics if `pos` is outside the grid.
pub fn random_walk_step(
    grid: &GridSpec,
    pos: Point,
    step_cells: u32,
    rng: &mut impl Rng,
) -> Point {
    random_walk_step_in(grid, pos, step_cells, None, rng)
        .expect("an in-bounds step always exists on grids wider than the step")
}

/// Random-walk step restricted to cells where `allowed` is true (row-major
/// mask). Returns `None` when no cardinal step lands in the allowed region.
pub fn random_walk_step_in(
    grid: &GridSpec,
    pos: Point,
    step_cells: u32,
    allowed: Option<&[bool]>,
    rng: &mut impl Rng,
) -> Option<Point> {
    let cell = grid
        .nearest_cell(pos)
        .expect("random walk requires an in-bounds position");
    let s = step_cells as isize;
    let deltas = [(0isize, s), (0, -s), (-s, 0), (s, 0)]; // up, down, left, right
    let mut feasible = Vec::with_capacity(4);
    for (dx, dy) in deltas {
        let ix = cell.ix as isize + dx;
        let iy = cell.iy as isize + dy;
        if ix < 0 || iy < 0 || ix >= grid.nx() as isize || iy >= grid.ny() as isize {
            continue;
        }
        let next = Cell::new(ix as usize, iy as usize);
        if let Some(mask) = allowed {
            if !mask[grid.cell_index(next)] {
                continue;
            }
        }
        feasible.push(next);
    }
    if feasible.is_empty() {
        return None;
    }
    let pick = rng.random_range(0..feasible.len());
    Some(grid.cell_center(feasible[pick]))
}
