//! Acquisition rules: scoring candidate cells and picking the next target.
//!
//! The adaptive variants score every candidate cell with a weighted blend of
//! the posterior mean (exploitation) and the predictive variance
//! (exploration): I(q) = alpha * mu(q) + beta * var(q). The two baselines do
//! not select targets at all; their trajectories are scripted by the planner.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::Prediction;
use crate::grid::Point;

/// Default variance threshold for [`InfoVariant::MaxVarMaxMean`], in dBm^2.
pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 5.0;

/// The canonical (alpha, beta) weight rows for the blended variants, from
/// pure exploitation to pure exploration.
pub const STANDARD_WEIGHTS: [(f64, f64); 5] = [
    (1.0, 0.0),   // MaxMean
    (0.75, 0.25), // Alpha75
    (0.5, 0.5),   // Alpha50
    (0.25, 0.75), // Alpha25
    (0.0, 1.0),   // MaxVar
];

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("weights must satisfy alpha, beta in [0, 1] and alpha + beta = 1, got alpha={alpha}, beta={beta}")]
    InvalidWeights { alpha: f64, beta: f64 },
    #[error("variance threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error("the {0} baseline does not select targets")]
    NotAdaptive(String),
    #[error("no candidate cells: the region mask is empty")]
    EmptyMask,
}

/// Target-selection behavior of a sampling variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InfoVariant {
    /// I(q) = alpha * mean + beta * variance with alpha + beta = 1.
    Weighted { alpha: f64, beta: f64 },
    /// Pure exploration until the mean masked-cell variance falls to the
    /// threshold, then pure exploitation.
    MaxVarMaxMean { variance_threshold: f64 },
    /// Scripted serpentine coverage; non-adaptive.
    Sweep,
    /// Scripted random walk; non-adaptive.
    RandomWalk,
}

impl InfoVariant {
    pub fn weighted(alpha: f64, beta: f64) -> Result<Self, AcquisitionError> {
        let ok = alpha.is_finite()
            && beta.is_finite()
            && (0.0..=1.0).contains(&alpha)
            && (0.0..=1.0).contains(&beta)
            && (alpha + beta - 1.0).abs() <= 1e-9;
        if ok {
            Ok(InfoVariant::Weighted { alpha, beta })
        } else {
            Err(AcquisitionError::InvalidWeights { alpha, beta })
        }
    }

    pub fn max_mean() -> Self {
        InfoVariant::Weighted { alpha: 1.0, beta: 0.0 }
    }

    pub fn alpha75() -> Self {
        InfoVariant::Weighted { alpha: 0.75, beta: 0.25 }
    }

    pub fn alpha50() -> Self {
        InfoVariant::Weighted { alpha: 0.5, beta: 0.5 }
    }

    pub fn alpha25() -> Self {
        InfoVariant::Weighted { alpha: 0.25, beta: 0.75 }
    }

    pub fn max_var() -> Self {
        InfoVariant::Weighted { alpha: 0.0, beta: 1.0 }
    }

    pub fn max_var_max_mean(variance_threshold: f64) -> Result<Self, AcquisitionError> {
        if variance_threshold.is_finite() && variance_threshold > 0.0 {
            Ok(InfoVariant::MaxVarMaxMean { variance_threshold })
        } else {
            Err(AcquisitionError::InvalidThreshold(variance_threshold))
        }
    }

    /// True for variants that choose targets from the information map.
    pub fn is_adaptive(&self) -> bool {
        !matches!(self, InfoVariant::Sweep | InfoVariant::RandomWalk)
    }

    /// Stable display name used in result files and plots.
    pub fn label(&self) -> String {
        match self {
            InfoVariant::Weighted { alpha, beta } => match (alpha, beta) {
                (a, _) if *a == 1.0 => "MaxMean".to_string(),
                (a, _) if *a == 0.75 => "Alpha75".to_string(),
                (a, _) if *a == 0.5 => "Alpha50".to_string(),
                (a, _) if *a == 0.25 => "Alpha25".to_string(),
                (a, _) if *a == 0.0 => "MaxVar".to_string(),
                (a, b) => format!("Alpha{a:.2}Beta{b:.2}"),
            },
            InfoVariant::MaxVarMaxMean { .. } => "MaxVarMaxMean".to_string(),
            InfoVariant::Sweep => "Sweep".to_string(),
            InfoVariant::RandomWalk => "RandomWalk".to_string(),
        }
    }

    /// True if the weights match one of the five canonical rows.
    pub fn has_standard_weights(&self) -> bool {
        match self {
            InfoVariant::Weighted { alpha, beta } => STANDARD_WEIGHTS
                .iter()
                .any(|(a, b)| (alpha - a).abs() <= 1e-12 && (beta - b).abs() <= 1e-12),
            _ => true,
        }
    }
}

/// Per-cell informativeness I(q) = alpha * mean + beta * variance.
pub fn informativeness(mean: &[f64], variance: &[f64], alpha: f64, beta: f64) -> Vec<f64> {
    assert_eq!(
        mean.len(),
        variance.len(),
        "mean and variance maps must be aligned"
    );
    mean.iter()
        .zip(variance)
        .map(|(m, v)| alpha * m + beta * v)
        .collect()
}

/// Picks the next sampling cell among `mask`ed candidates.
///
/// Score ties are broken by the smaller Euclidean distance to `robot_pos`,
/// then by lexicographic (x, y) order of the cell center, so selection is
/// fully deterministic. Returns the row-major cell index.
pub fn select_target(
    variant: &InfoVariant,
    prediction: &Prediction,
    mask: &[bool],
    cells: &[Point],
    robot_pos: Point,
) -> Result<usize, AcquisitionError> {
    assert_eq!(prediction.mean.len(), cells.len());
    assert_eq!(prediction.variance.len(), cells.len());
    assert_eq!(mask.len(), cells.len());

    let scores: Vec<f64> = match variant {
        InfoVariant::Weighted { alpha, beta } => {
            informativeness(&prediction.mean, &prediction.variance, *alpha, *beta)
        }
        InfoVariant::MaxVarMaxMean { variance_threshold } => {
            let masked: Vec<f64> = mask
                .iter()
                .zip(&prediction.variance)
                .filter_map(|(keep, v)| keep.then_some(*v))
                .collect();
            if masked.is_empty() {
                return Err(AcquisitionError::EmptyMask);
            }
            let mean_variance = masked.iter().sum::<f64>() / masked.len() as f64;
            if mean_variance > *variance_threshold {
                prediction.variance.clone()
            } else {
                prediction.mean.clone()
            }
        }
        InfoVariant::Sweep | InfoVariant::RandomWalk => {
            return Err(AcquisitionError::NotAdaptive(variant.label()));
        }
    };

    let mut best: Option<(usize, f64, f64)> = None; // (index, score, dist_sq)
    for idx in 0..cells.len() {
        if !mask[idx] {
            continue;
        }
        let score = scores[idx];
        let dist_sq = cells[idx].dist_sq(robot_pos);
        let better = match &best {
            None => true,
            Some((b_idx, b_score, b_dist)) => {
                if score != *b_score {
                    score > *b_score
                } else if dist_sq != *b_dist {
                    dist_sq < *b_dist
                } else {
                    let (c, b) = (cells[idx], cells[*b_idx]);
                    c.x.total_cmp(&b.x).then(c.y.total_cmp(&b.y)).is_lt()
                }
            }
        };
        if better {
            best = Some((idx, score, dist_sq));
        }
    }
    best.map(|(idx, _, _)| idx).ok_or(AcquisitionError::EmptyMask)
}
