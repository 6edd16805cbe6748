//! Map-quality metrics and cross-run aggregation.
//!
//! Per-step metrics compare the model's posterior over all grid cells with
//! the frozen ground truth. Aggregation collects those metrics at fixed
//! sample-count checkpoints across repeated runs and reports mean and
//! sample standard deviation for each.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridSpec, Point};
use crate::sim::StepRecord;

/// Maximum distance between the predicted peak and the true source for a
/// localization to count as correct.
pub const LOCALIZATION_TOLERANCE_M: f64 = 1.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot aggregate an empty set of runs")]
    NoRuns,
}

/// Root-mean-square error between predicted means and ground truth, both in
/// row-major cell order.
pub fn rmse(predicted: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(predicted.len(), truth.len(), "prediction/truth length mismatch");
    assert!(!predicted.is_empty(), "rmse of empty field");
    let sum_sq: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    (sum_sq / predicted.len() as f64).sqrt()
}

/// Average posterior variance over the grid; the exploration metric.
pub fn mean_variance(variances: &[f64]) -> f64 {
    assert!(!variances.is_empty(), "mean variance of empty field");
    variances.iter().sum::<f64>() / variances.len() as f64
}

/// Center of the cell with the highest predicted mean. Ties keep the lowest
/// row-major cell index so the result is deterministic.
pub fn predicted_peak(grid: &GridSpec, means: &[f64]) -> Point {
    assert_eq!(means.len(), grid.cell_count(), "means must cover the grid");
    let mut best = 0usize;
    for (idx, &m) in means.iter().enumerate().skip(1) {
        if m > means[best] {
            best = idx;
        }
    }
    grid.cell_center(grid.cell_at(best))
}

/// Distance in meters from the predicted peak cell to the true source.
pub fn localization_error_m(grid: &GridSpec, means: &[f64], source: Point) -> f64 {
    predicted_peak(grid, means).dist(source)
}

/// Whether the predicted peak lies within [`LOCALIZATION_TOLERANCE_M`] of
/// the true source.
pub fn localization_correct(grid: &GridSpec, means: &[f64], source: Point) -> bool {
    localization_error_m(grid, means, source) <= LOCALIZATION_TOLERANCE_M
}

/// A point in a run at which metrics are compared across runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Checkpoint {
    /// After this many samples (team total in multi-robot runs).
    Samples(u32),
    /// Halfway through the run, by sample count (rounded down, at least 1).
    Half,
    /// The final sample of the run.
    Last,
}

impl Checkpoint {
    /// Resolves to a 1-based sample count for a run of `total` samples, or
    /// `None` when the run ended before reaching this checkpoint.
    pub fn resolve(&self, total: usize) -> Option<usize> {
        if total == 0 {
            return None;
        }
        match *self {
            Checkpoint::Samples(n) => {
                let n = n as usize;
                (n >= 1 && n <= total).then_some(n)
            }
            Checkpoint::Half => Some((total / 2).max(1)),
            Checkpoint::Last => Some(total),
        }
    }

    /// Short name used in report tables ("10", "half", "last", ...).
    pub fn label(&self) -> String {
        match self {
            Checkpoint::Samples(n) => n.to_string(),
            Checkpoint::Half => "half".to_string(),
            Checkpoint::Last => "last".to_string(),
        }
    }
}

/// Checkpoints reported by default: a ladder of early sample counts plus the
/// half-way and final states of each run.
pub fn default_checkpoints() -> Vec<Checkpoint> {
    vec![
        Checkpoint::Samples(10),
        Checkpoint::Samples(25),
        Checkpoint::Samples(35),
        Checkpoint::Samples(45),
        Checkpoint::Samples(50),
        Checkpoint::Half,
        Checkpoint::Last,
    ]
}

/// Mean and sample standard deviation of one metric across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std_dev: f64,
    pub n: usize,
}

impl MetricStats {
    pub fn from_samples(samples: &[f64]) -> MetricStats {
        let n = samples.len();
        if n == 0 {
            return MetricStats {
                mean: f64::NAN,
                std_dev: f64::NAN,
                n: 0,
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std_dev = if n < 2 {
            0.0
        } else {
            let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
            (ss / (n - 1) as f64).sqrt()
        };
        MetricStats { mean, std_dev, n }
    }
}

/// Cross-run metric statistics at one checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointSummary {
    pub checkpoint: Checkpoint,
    /// Resolved sample count (varies across runs for half/last).
    pub samples: MetricStats,
    pub rmse: MetricStats,
    pub mean_variance: MetricStats,
    /// Team-total distance traveled, meters.
    pub distance_m: MetricStats,
    /// Elapsed simulated time, seconds.
    pub time_s: MetricStats,
    /// Fraction of contributing runs whose predicted peak was within
    /// tolerance of the true source.
    pub localization_accuracy: f64,
    /// Number of runs that reached this checkpoint.
    pub runs: usize,
}

/// Aggregated metrics for one scenario/strategy pairing across runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub scenario: String,
    pub strategy: String,
    pub checkpoints: Vec<CheckpointSummary>,
}

/// Aggregates per-step metric logs from repeated runs of one
/// scenario/strategy pairing. Each element of `runs` is the full record
/// sequence of one run; a run contributes to a checkpoint only if it took
/// that many samples.
pub fn aggregate(
    scenario: &str,
    strategy: &str,
    runs: &[&[StepRecord]],
    checkpoints: &[Checkpoint],
) -> Result<ExperimentSummary, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::NoRuns);
    }
    let mut out = Vec::with_capacity(checkpoints.len());
    for cp in checkpoints {
        let mut rmses = Vec::new();
        let mut variances = Vec::new();
        let mut distances = Vec::new();
        let mut times = Vec::new();
        let mut sample_counts = Vec::new();
        let mut correct = 0usize;
        for run in runs {
            let Some(k) = cp.resolve(run.len()) else {
                continue;
            };
            let record = &run[k - 1];
            debug_assert_eq!(record.step as usize, k, "records must be in step order");
            rmses.push(record.rmse);
            variances.push(record.mean_var);
            distances.push(record.cum_dist_m);
            times.push(record.time_s);
            sample_counts.push(k as f64);
            if record.loc_correct {
                correct += 1;
            }
        }
        let runs_here = rmses.len();
        out.push(CheckpointSummary {
            checkpoint: *cp,
            samples: MetricStats::from_samples(&sample_counts),
            rmse: MetricStats::from_samples(&rmses),
            mean_variance: MetricStats::from_samples(&variances),
            distance_m: MetricStats::from_samples(&distances),
            time_s: MetricStats::from_samples(&times),
            localization_accuracy: if runs_here == 0 {
                f64::NAN
            } else {
                correct as f64 / runs_here as f64
            },
            runs: runs_here,
        });
    }
    Ok(ExperimentSummary {
        scenario: scenario.to_string(),
        strategy: strategy.to_string(),
        checkpoints: out,
    })
}
