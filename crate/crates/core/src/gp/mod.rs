//! Exact Gaussian-process regression with a squared-exponential kernel.
//!
//! The regressor is the estimation backbone of the simulator: robots feed it
//! signal-strength samples and it produces a posterior mean and variance for
//! every grid cell. Hyperparameters are learned by maximizing the log
//! marginal likelihood (see [`fit_hyperparams`]).
//!
//! Internally the solver collapses repeated observations at identical
//! locations into a single row with noise scaled by the repeat count. For a
//! Gaussian likelihood this is an exact reformulation (repeated measurements
//! enter the posterior only through their per-location mean), and it keeps
//! the factorized system no larger than the number of distinct locations even
//! when a robot samples the same cell hundreds of times.

mod fit;
mod online;

pub use fit::{fit_hyperparams, FitOptions};
pub use online::OnlinePosterior;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Point;

/// Smallest admissible observation-noise variance. Keeps the factorized
/// system positive definite when the optimizer pushes the noise to zero.
pub const NOISE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("hyperparameter {name} must be positive and finite, got {value}")]
    NonPositiveHyperparam { name: &'static str, value: f64 },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("hyperparameter fitting needs at least 2 samples, got {0}")]
    InsufficientData(usize),
    #[error("training locations and values differ in length: {locations} vs {values}")]
    MismatchedLengths { locations: usize, values: usize },
    #[error("training data contain non-finite coordinates or values")]
    NonFiniteData,
    #[error("covariance matrix is not positive definite even with diagonal jitter")]
    SingularGram,
}

/// Squared-exponential kernel hyperparameters plus the observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Prior signal variance sigma_f^2 (squared units of the observations).
    pub signal_variance: f64,
    /// Kernel correlation length l in meters.
    pub length_scale: f64,
    /// Observation noise variance sigma_n^2, floored at [`NOISE_FLOOR`].
    pub noise_variance: f64,
}

impl Hyperparams {
    /// Validates positivity and applies the noise floor.
    pub fn new(
        signal_variance: f64,
        length_scale: f64,
        noise_variance: f64,
    ) -> Result<Self, GpError> {
        if !(signal_variance > 0.0 && signal_variance.is_finite()) {
            return Err(GpError::NonPositiveHyperparam {
                name: "signal_variance",
                value: signal_variance,
            });
        }
        if !(length_scale > 0.0 && length_scale.is_finite()) {
            return Err(GpError::NonPositiveHyperparam {
                name: "length_scale",
                value: length_scale,
            });
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(GpError::NonPositiveHyperparam {
                name: "noise_variance",
                value: noise_variance,
            });
        }
        Ok(Hyperparams {
            signal_variance,
            length_scale,
            noise_variance: noise_variance.max(NOISE_FLOOR),
        })
    }

    /// Natural logs of the three parameters, the space the optimizer works in.
    pub(crate) fn to_log(self) -> [f64; 3] {
        [
            self.signal_variance.ln(),
            self.length_scale.ln(),
            self.noise_variance.ln(),
        ]
    }

    pub(crate) fn from_log(log: [f64; 3]) -> Self {
        Hyperparams {
            signal_variance: log[0].exp(),
            length_scale: log[1].exp(),
            noise_variance: log[2].exp().max(NOISE_FLOOR),
        }
    }
}

impl Default for Hyperparams {
    /// Neutral starting point used before the first likelihood fit: generous
    /// prior variance, a correlation length of two cell pitches, unit noise.
    fn default() -> Self {
        Hyperparams {
            signal_variance: 100.0,
            length_scale: 2.0,
            noise_variance: 1.0,
        }
    }
}

/// Squared-exponential covariance between two locations.
pub fn kernel(a: Point, b: Point, h: &Hyperparams) -> f64 {
    let l2 = h.length_scale * h.length_scale;
    h.signal_variance * (-a.dist_sq(b) / (2.0 * l2)).exp()
}

/// Dense covariance matrix of `points` with the noise variance on the
/// diagonal, i.e. K(X, X) + sigma_n^2 I.
pub fn gram_matrix(points: &[Point], h: &Hyperparams) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| {
        kernel(points[i], points[j], h) + if i == j { h.noise_variance } else { 0.0 }
    })
}

/// Ordered collection of (location, observed value) pairs. Duplicate
/// locations are allowed; they represent repeated measurements.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    locations: Vec<Point>,
    values: Vec<f64>,
}

impl TrainingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(locations: Vec<Point>, values: Vec<f64>) -> Result<Self, GpError> {
        if locations.len() != values.len() {
            return Err(GpError::MismatchedLengths {
                locations: locations.len(),
                values: values.len(),
            });
        }
        if locations.iter().any(|p| !(p.x.is_finite() && p.y.is_finite()))
            || values.iter().any(|v| !v.is_finite())
        {
            return Err(GpError::NonFiniteData);
        }
        Ok(TrainingSet { locations, values })
    }

    pub fn push(&mut self, location: Point, value: f64) {
        assert!(
            location.x.is_finite() && location.y.is_finite() && value.is_finite(),
            "training samples must be finite"
        );
        self.locations.push(location);
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn locations(&self) -> &[Point] {
        &self.locations
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Arithmetic mean of the observed values (0 for an empty set).
    pub fn value_mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

/// Training data collapsed to distinct locations, sorted lexicographically by
/// (x, y) so results do not depend on sample insertion order.
#[derive(Debug, Clone)]
pub(crate) struct Grouped {
    pub locations: Vec<Point>,
    /// Number of raw observations collapsed into each row.
    pub counts: Vec<f64>,
    /// Per-location mean of the observed values.
    pub means: Vec<f64>,
    /// Total number of raw observations.
    pub n_total: usize,
    /// Within-group sum of squared deviations from the group means.
    pub ssw: f64,
}

impl Grouped {
    pub fn build(train: &TrainingSet) -> Self {
        let n = train.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let (pa, pb) = (train.locations[a], train.locations[b]);
            pa.x.total_cmp(&pb.x).then(pa.y.total_cmp(&pb.y))
        });

        let mut locations = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        let mut sums: Vec<f64> = Vec::new();
        let mut group_of = vec![0usize; n];
        for &i in &order {
            let p = train.locations[i];
            let same = locations
                .last()
                .is_some_and(|q: &Point| q.x == p.x && q.y == p.y);
            if !same {
                locations.push(p);
                counts.push(0.0);
                sums.push(0.0);
            }
            let g = locations.len() - 1;
            counts[g] += 1.0;
            sums[g] += train.values[i];
            group_of[i] = g;
        }
        let means: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(s, m)| s / m)
            .collect();
        // Within-group scatter, accumulated directly to avoid cancellation.
        let mut ssw = 0.0;
        for i in 0..n {
            let d = train.values[i] - means[group_of[i]];
            ssw += d * d;
        }
        Grouped {
            locations,
            counts,
            means,
            n_total: n,
            ssw,
        }
    }

    /// Matrix of squared distances between distinct locations; reused across
    /// likelihood evaluations with different hyperparameters.
    pub fn dist_sq_matrix(&self) -> DMatrix<f64> {
        let u = self.locations.len();
        DMatrix::from_fn(u, u, |i, j| self.locations[i].dist_sq(self.locations[j]))
    }

    /// Collapsed covariance C = K_u + sigma_n^2 diag(1/m_g).
    pub fn covariance(&self, dist_sq: &DMatrix<f64>, h: &Hyperparams) -> DMatrix<f64> {
        let u = self.locations.len();
        let l2 = h.length_scale * h.length_scale;
        let mut c = DMatrix::from_fn(u, u, |i, j| {
            h.signal_variance * (-dist_sq[(i, j)] / (2.0 * l2)).exp()
        });
        for g in 0..u {
            c[(g, g)] += h.noise_variance / self.counts[g];
        }
        c
    }
}

/// Log marginal likelihood value and its gradient with respect to the natural
/// logs of (signal_variance, length_scale, noise_variance).
#[derive(Debug, Clone, Copy)]
pub struct LogMarginal {
    pub value: f64,
    pub grad: [f64; 3],
}

/// Log marginal likelihood of the training data under the given
/// hyperparameters, with the analytic gradient in log-parameter space.
///
/// A non-positive-definite covariance yields `value = -inf` with a zero
/// gradient so that an optimizer rejects the step.
pub fn log_marginal_likelihood(
    train: &TrainingSet,
    h: &Hyperparams,
) -> Result<LogMarginal, GpError> {
    if train.is_empty() {
        return Err(GpError::EmptyTrainingSet);
    }
    let grouped = Grouped::build(train);
    let dist_sq = grouped.dist_sq_matrix();
    Ok(log_marginal_grouped(&grouped, &dist_sq, h))
}

/// Likelihood core on the collapsed system. Exact for the raw data: with
/// groups of sizes m_g and means zbar, C = K_u + sigma_n^2 diag(1/m_g) and
///
///   lml = -1/2 zbar' C^-1 zbar - 1/2 ln det C
///         - ssw / (2 sigma_n^2) - (N - u)/2 ln sigma_n^2
///         - 1/2 sum ln m_g - N/2 ln(2 pi),
///
/// which reduces to the familiar expression when all locations are distinct.
pub(crate) fn log_marginal_grouped(
    grouped: &Grouped,
    dist_sq: &DMatrix<f64>,
    h: &Hyperparams,
) -> LogMarginal {
    const REJECTED: LogMarginal = LogMarginal {
        value: f64::NEG_INFINITY,
        grad: [0.0; 3],
    };
    let Some((chol, alpha, value)) = lml_factorized(grouped, dist_sq, h) else {
        return REJECTED;
    };
    let u = grouped.locations.len();
    let n = grouped.n_total as f64;
    let sn2 = h.noise_variance;

    // Gradient in log space: d lml / d ln(theta) =
    //   1/2 alpha' dC alpha - 1/2 tr(C^-1 dC)  (+ explicit noise terms).
    let c_inv = chol.inverse();
    let l2 = h.length_scale * h.length_scale;
    let mut quad = [0.0f64; 3];
    let mut trace = [0.0f64; 3];
    for i in 0..u {
        for j in 0..u {
            let k_se = h.signal_variance * (-dist_sq[(i, j)] / (2.0 * l2)).exp();
            // dC/d ln sf2 = K_u; dC/d ln l = K_u .* (r^2 / l^2);
            // dC/d ln sn2 = sigma_n^2 diag(1/m_g).
            let d = [
                k_se,
                k_se * dist_sq[(i, j)] / l2,
                if i == j { sn2 / grouped.counts[i] } else { 0.0 },
            ];
            let aa = alpha[i] * alpha[j];
            let ci = c_inv[(i, j)];
            for t in 0..3 {
                quad[t] += aa * d[t];
                trace[t] += ci * d[t];
            }
        }
    }
    let mut grad = [0.0f64; 3];
    for t in 0..3 {
        grad[t] = 0.5 * quad[t] - 0.5 * trace[t];
    }
    // The collapsed-out noise terms depend on sigma_n^2 directly.
    grad[2] += 0.5 * grouped.ssw / sn2 - 0.5 * (n - u as f64);
    LogMarginal { value, grad }
}

/// Likelihood value alone, skipping the gradient and therefore the explicit
/// inverse. Used by line searches, which only compare objective values.
/// Returns `-inf` when the covariance is not positive definite.
pub(crate) fn log_marginal_value(
    grouped: &Grouped,
    dist_sq: &DMatrix<f64>,
    h: &Hyperparams,
) -> f64 {
    match lml_factorized(grouped, dist_sq, h) {
        Some((_, _, value)) => value,
        None => f64::NEG_INFINITY,
    }
}

/// Shared factorization step: Cholesky of the collapsed covariance, the
/// weight vector C^-1 zbar, and the likelihood value. `None` when the matrix
/// is not positive definite or the value is non-finite.
fn lml_factorized(
    grouped: &Grouped,
    dist_sq: &DMatrix<f64>,
    h: &Hyperparams,
) -> Option<(Cholesky<f64, nalgebra::Dyn>, DVector<f64>, f64)> {
    let u = grouped.locations.len();
    let n = grouped.n_total as f64;
    let c = grouped.covariance(dist_sq, h);
    let chol = Cholesky::new(c)?;

    let zbar = DVector::from_column_slice(&grouped.means);
    let alpha = chol.solve(&zbar);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let ln_m: f64 = grouped.counts.iter().map(|m| m.ln()).sum();
    let sn2 = h.noise_variance;
    let value = -0.5 * zbar.dot(&alpha)
        - 0.5 * log_det
        - 0.5 * grouped.ssw / sn2
        - 0.5 * (n - u as f64) * sn2.ln()
        - 0.5 * ln_m
        - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    if !value.is_finite() {
        return None;
    }
    Some((chol, alpha, value))
}

/// How the model handles the prior mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeanPolicy {
    /// Classic zero-mean prior on the raw observations.
    Zero,
    /// Center observations on their mean before regression and add the mean
    /// back to predictions. Far from data the posterior mean then relaxes to
    /// the observation average instead of zero, which avoids biasing
    /// unexplored cells toward an arbitrary absolute level.
    TrainingMean,
}

/// Posterior mean and variance batches, aligned with the query slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// A factorized GP posterior ready for prediction.
#[derive(Debug, Clone)]
pub struct GpModel {
    hyper: Hyperparams,
    mean_offset: f64,
    /// Distinct training locations, lexicographically sorted.
    locations: Vec<Point>,
    /// Lower Cholesky factor of the collapsed covariance.
    lower: DMatrix<f64>,
    /// C^-1 (zbar - offset).
    weights: DVector<f64>,
    n_samples: usize,
}

impl GpModel {
    /// Factorizes the posterior for the given training data. An empty
    /// training set yields the prior (mean 0, variance sigma_f^2).
    pub fn fit(
        train: &TrainingSet,
        hyper: &Hyperparams,
        mean_policy: MeanPolicy,
    ) -> Result<Self, GpError> {
        let grouped = Grouped::build(train);
        let u = grouped.locations.len();
        let mean_offset = match mean_policy {
            MeanPolicy::Zero => 0.0,
            MeanPolicy::TrainingMean => train.value_mean(),
        };
        if u == 0 {
            return Ok(GpModel {
                hyper: *hyper,
                mean_offset,
                locations: Vec::new(),
                lower: DMatrix::zeros(0, 0),
                weights: DVector::zeros(0),
                n_samples: 0,
            });
        }
        let dist_sq = grouped.dist_sq_matrix();
        // Escalating jitter guards against borderline indefiniteness when
        // heavy duplication shrinks the effective noise on some rows.
        let chol = [0.0, 1e-10, 1e-8, 1e-6]
            .iter()
            .find_map(|jitter| {
                let mut c = grouped.covariance(&dist_sq, hyper);
                if *jitter > 0.0 {
                    for i in 0..u {
                        c[(i, i)] += jitter * hyper.signal_variance;
                    }
                }
                Cholesky::new(c)
            })
            .ok_or(GpError::SingularGram)?;
        let centered = DVector::from_iterator(u, grouped.means.iter().map(|z| z - mean_offset));
        let weights = chol.solve(&centered);
        Ok(GpModel {
            hyper: *hyper,
            mean_offset,
            locations: grouped.locations,
            lower: chol.unpack(),
            weights,
            n_samples: grouped.n_total,
        })
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Posterior mean and variance at each query point.
    pub fn predict(&self, queries: &[Point]) -> Prediction {
        let q = queries.len();
        let u = self.locations.len();
        if u == 0 {
            return Prediction {
                mean: vec![self.mean_offset; q],
                variance: vec![self.hyper.signal_variance; q],
            };
        }
        let l2 = self.hyper.length_scale * self.hyper.length_scale;
        let k_uq = DMatrix::from_fn(u, q, |i, j| {
            self.hyper.signal_variance
                * (-self.locations[i].dist_sq(queries[j]) / (2.0 * l2)).exp()
        });
        let mean: Vec<f64> = (0..q)
            .map(|j| k_uq.column(j).dot(&self.weights) + self.mean_offset)
            .collect();
        let v = self
            .lower
            .solve_lower_triangular(&k_uq)
            .expect("cholesky factor is invertible by construction");
        let variance: Vec<f64> = (0..q)
            .map(|j| {
                (self.hyper.signal_variance - v.column(j).norm_squared())
                    .clamp(0.0, self.hyper.signal_variance)
            })
            .collect();
        Prediction { mean, variance }
    }

    /// Convenience for a single query point; returns (mean, variance).
    pub fn predict_one(&self, query: Point) -> (f64, f64) {
        let p = self.predict(std::slice::from_ref(&query));
        (p.mean[0], p.variance[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    #[test]
    fn kernel_unit_params_at_unit_offsets() {
        let h = Hyperparams::new(1.0, 1.0, 0.0).unwrap();
        let k = kernel(pt(0.0, 0.0), pt(1.0, 1.0), &h);
        assert!((k - (-1.0f64).exp()).abs() < 1e-12, "got {k}");
        assert!((k - 0.367879441).abs() < 1e-9);
    }

    #[test]
    fn kernel_peaks_at_zero_distance_and_decays() {
        let h = Hyperparams::new(2.5, 1.7, 0.0).unwrap();
        assert_eq!(kernel(pt(3.0, 4.0), pt(3.0, 4.0), &h), 2.5);
        let near = kernel(pt(0.0, 0.0), pt(1.0, 0.0), &h);
        let far = kernel(pt(0.0, 0.0), pt(5.0, 0.0), &h);
        assert!(near > far && far > 0.0);
    }

    #[test]
    fn kernel_is_symmetric() {
        let h = Hyperparams::new(3.0, 0.8, 0.0).unwrap();
        let (a, b) = (pt(1.2, -0.4), pt(-2.0, 3.3));
        assert_eq!(kernel(a, b, &h), kernel(b, a, &h));
    }

    #[test]
    fn noise_floor_is_applied() {
        let h = Hyperparams::new(1.0, 1.0, 0.0).unwrap();
        assert_eq!(h.noise_variance, NOISE_FLOOR);
        assert!(Hyperparams::new(1.0, 1.0, -0.1).is_err());
        assert!(Hyperparams::new(0.0, 1.0, 1.0).is_err());
        assert!(Hyperparams::new(1.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn lml_single_zero_sample_is_half_log_two_pi() {
        // One observation of 0 with total variance sf2 + sn2 = 1 reduces the
        // likelihood to the standard normal density at zero.
        let train = TrainingSet::from_parts(vec![pt(0.0, 0.0)], vec![0.0]).unwrap();
        let h = Hyperparams::new(0.75, 1.3, 0.25).unwrap();
        let lml = log_marginal_likelihood(&train, &h).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((lml.value - expected).abs() < 1e-12, "got {}", lml.value);
        assert!((lml.value + 0.918938533).abs() < 1e-9);
    }

    #[test]
    fn lml_with_zero_values_reduces_to_log_det_term() {
        let locs = vec![pt(0.0, 0.0), pt(1.0, 2.0), pt(3.0, 1.0)];
        let train = TrainingSet::from_parts(locs.clone(), vec![0.0; 3]).unwrap();
        let h = Hyperparams::new(2.0, 1.5, 0.3).unwrap();
        let lml = log_marginal_likelihood(&train, &h).unwrap();
        let gram = gram_matrix(&locs, &h);
        let chol = Cholesky::new(gram).unwrap();
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let expected = -0.5 * log_det - 1.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((lml.value - expected).abs() < 1e-10);
    }

    #[test]
    fn single_point_posterior_matches_closed_form() {
        let train = TrainingSet::from_parts(vec![pt(0.0, 0.0)], vec![1.0]).unwrap();
        let h = Hyperparams::new(1.0, 1.0, 0.0).unwrap();
        let model = GpModel::fit(&train, &h, MeanPolicy::Zero).unwrap();
        let (mu, var) = model.predict_one(pt(1.0, 0.0));
        assert!((mu - (-0.5f64).exp()).abs() < 1e-6, "mean {mu}");
        assert!((mu - 0.606531).abs() < 1e-6);
        assert!((var - (1.0 - (-1.0f64).exp())).abs() < 1e-6, "variance {var}");
        assert!((var - 0.632121).abs() < 1e-6);
    }

    #[test]
    fn empty_training_set_predicts_the_prior() {
        let train = TrainingSet::new();
        let h = Hyperparams::new(4.0, 2.0, 0.5).unwrap();
        let model = GpModel::fit(&train, &h, MeanPolicy::TrainingMean).unwrap();
        let pred = model.predict(&[pt(0.0, 0.0), pt(5.0, 5.0)]);
        assert_eq!(pred.mean, vec![0.0, 0.0]);
        assert_eq!(pred.variance, vec![4.0, 4.0]);
    }

    #[test]
    fn training_mean_policy_relaxes_to_observation_average() {
        let train = TrainingSet::from_parts(
            vec![pt(0.0, 0.0), pt(1.0, 0.0)],
            vec![-60.0, -70.0],
        )
        .unwrap();
        let h = Hyperparams::new(25.0, 1.0, 0.1).unwrap();
        let model = GpModel::fit(&train, &h, MeanPolicy::TrainingMean).unwrap();
        let (far_mean, far_var) = model.predict_one(pt(500.0, 500.0));
        assert!((far_mean - (-65.0)).abs() < 1e-9, "got {far_mean}");
        assert!((far_var - 25.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_observations_match_dense_solution() {
        // Grouped solver against a brute-force dense system with duplicates.
        let locs = vec![
            pt(0.0, 0.0),
            pt(2.0, 1.0),
            pt(0.0, 0.0),
            pt(4.0, 3.0),
            pt(2.0, 1.0),
            pt(0.0, 0.0),
        ];
        let vals = vec![-58.0, -63.0, -58.0, -70.0, -63.0, -58.0];
        let train = TrainingSet::from_parts(locs.clone(), vals.clone()).unwrap();
        let h = Hyperparams::new(30.0, 1.8, 0.4).unwrap();
        let model = GpModel::fit(&train, &h, MeanPolicy::Zero).unwrap();

        let gram = gram_matrix(&locs, &h);
        let chol = Cholesky::new(gram).unwrap();
        let alpha = chol.solve(&DVector::from_column_slice(&vals));
        for q in [pt(1.0, 0.5), pt(3.0, 3.0), pt(0.0, 0.0)] {
            let k: DVector<f64> =
                DVector::from_iterator(locs.len(), locs.iter().map(|p| kernel(*p, q, &h)));
            let dense_mean = k.dot(&alpha);
            let dense_var = kernel(q, q, &h) - k.dot(&chol.solve(&k));
            let (mu, var) = model.predict_one(q);
            assert!((mu - dense_mean).abs() < 1e-9, "mean {mu} vs {dense_mean}");
            assert!((var - dense_var).abs() < 1e-9, "var {var} vs {dense_var}");
        }
    }

    #[test]
    fn lml_with_duplicates_matches_dense_formula() {
        let locs = vec![pt(0.0, 0.0), pt(1.0, 1.0), pt(0.0, 0.0), pt(3.0, 2.0)];
        // Distinct values at a repeated location exercise the scatter term.
        let vals = vec![-60.0, -64.0, -59.0, -71.0];
        let train = TrainingSet::from_parts(locs.clone(), vals.clone()).unwrap();
        let h = Hyperparams::new(12.0, 1.1, 0.7).unwrap();
        let lml = log_marginal_likelihood(&train, &h).unwrap();

        let gram = gram_matrix(&locs, &h);
        let chol = Cholesky::new(gram).unwrap();
        let y = DVector::from_column_slice(&vals);
        let alpha = chol.solve(&y);
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let expected = -0.5 * y.dot(&alpha)
            - 0.5 * log_det
            - 0.5 * vals.len() as f64 * (2.0 * std::f64::consts::PI).ln();
        assert!(
            (lml.value - expected).abs() < 1e-9,
            "grouped {} vs dense {expected}",
            lml.value
        );
    }

    #[test]
    fn interpolation_at_noise_floor() {
        let locs = vec![pt(0.0, 0.0), pt(3.0, 1.0), pt(1.0, 4.0), pt(6.0, 2.0)];
        let vals = vec![-55.0, -61.5, -58.2, -66.0];
        let train = TrainingSet::from_parts(locs.clone(), vals.clone()).unwrap();
        let h = Hyperparams::new(20.0, 1.5, NOISE_FLOOR).unwrap();
        for policy in [MeanPolicy::Zero, MeanPolicy::TrainingMean] {
            let model = GpModel::fit(&train, &h, policy).unwrap();
            let pred = model.predict(&locs);
            for (mu, z) in pred.mean.iter().zip(&vals) {
                assert!((mu - z).abs() < 1e-5, "{mu} vs {z}");
            }
        }
    }

    #[test]
    fn non_positive_definite_covariance_reports_neg_infinity() {
        // Zero distance between distinct entries with (clamped) tiny noise
        // still factorizes, so force failure via a NaN-free degenerate case:
        // two exactly coincident locations collapse, but three coincident
        // locations with huge signal variance and floor noise remain PD too.
        // The honest trigger is a noise below the floor with an immense
        // condition number; emulate by calling the internal routine with a
        // hand-built singular covariance.
        let grouped = Grouped {
            locations: vec![pt(0.0, 0.0), pt(1.0, 0.0)],
            counts: vec![1.0, 1.0],
            means: vec![1.0, 2.0],
            n_total: 2,
            ssw: 0.0,
        };
        // Identical rows => singular.
        let dist_sq = DMatrix::zeros(2, 2);
        let h = Hyperparams {
            signal_variance: 1.0,
            length_scale: 1.0,
            noise_variance: 0.0, // bypass the floor deliberately
        };
        let lml = log_marginal_grouped(&grouped, &dist_sq, &h);
        assert_eq!(lml.value, f64::NEG_INFINITY);
        assert_eq!(lml.grad, [0.0; 3]);
    }

    #[test]
    fn lml_gradient_matches_finite_differences() {
        let locs = vec![
            pt(0.0, 0.0),
            pt(1.0, 2.0),
            pt(3.0, 0.5),
            pt(2.0, 2.5),
            pt(4.0, 4.0),
            pt(0.5, 3.5),
        ];
        let vals = vec![-52.0, -57.0, -63.0, -60.5, -68.0, -59.0];
        let train = TrainingSet::from_parts(locs, vals).unwrap();
        let h = Hyperparams::new(9.0, 1.4, 0.5).unwrap();
        let analytic = log_marginal_likelihood(&train, &h).unwrap();
        let step = 1e-5;
        let logs = h.to_log();
        for t in 0..3 {
            let mut up = logs;
            up[t] += step;
            let mut dn = logs;
            dn[t] -= step;
            let f_up = log_marginal_likelihood(&train, &Hyperparams::from_log(up))
                .unwrap()
                .value;
            let f_dn = log_marginal_likelihood(&train, &Hyperparams::from_log(dn))
                .unwrap()
                .value;
            let numeric = (f_up - f_dn) / (2.0 * step);
            let tol = 1e-4 * numeric.abs().max(1.0);
            assert!(
                (analytic.grad[t] - numeric).abs() < tol,
                "component {t}: analytic {} vs numeric {numeric}",
                analytic.grad[t]
            );
        }
    }
}
