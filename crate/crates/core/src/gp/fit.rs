//! Hyperparameter learning by log-marginal-likelihood ascent.
//!
//! The three parameters are optimized jointly in natural-log space with a
//! small quasi-Newton (BFGS) loop, a backtracking line search and box
//! projection. Random restarts are drawn log-uniformly around scales derived
//! from the data, so the routine is deterministic given the caller's RNG.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use super::{
    log_marginal_grouped, log_marginal_value, GpError, Grouped, Hyperparams, TrainingSet,
    NOISE_FLOOR,
};

/// Knobs for [`fit_hyperparams`].
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Random restarts in addition to the run from the provided initial
    /// point. Zero makes the fit a single deterministic run.
    pub restarts: u32,
    /// Iteration cap per optimization run.
    pub max_iters: u32,
    /// Convergence threshold on the gradient norm in log space.
    pub grad_tol: f64,
    /// Upper bound for the fitted correlation length, typically the survey
    /// area's diagonal. Defaults to ten times the data's spatial extent.
    pub length_scale_cap: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 3,
            max_iters: 100,
            grad_tol: 1e-5,
            length_scale_cap: None,
        }
    }
}

/// Maximizes the log marginal likelihood over (signal_variance,
/// length_scale, noise_variance), starting from `init` plus
/// `opts.restarts` random restarts. The result never has a lower likelihood
/// than `init`.
///
/// Constant observations make the likelihood unbounded in the correlation
/// length; that case short-circuits to `init`'s signal variance with the
/// length scale at its cap and the noise at the floor.
pub fn fit_hyperparams(
    train: &TrainingSet,
    init: &Hyperparams,
    opts: &FitOptions,
    rng: &mut impl Rng,
) -> Result<Hyperparams, GpError> {
    if train.len() < 2 {
        return Err(GpError::InsufficientData(train.len()));
    }
    let init = Hyperparams::new(init.signal_variance, init.length_scale, init.noise_variance)?;

    let grouped = Grouped::build(train);
    let l_scale = spatial_extent(&grouped).max(1e-3);
    let cap = opts
        .length_scale_cap
        .unwrap_or(10.0 * l_scale)
        .max(2e-2 * l_scale);

    let values = train.values();
    let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - values.iter().cloned().fold(f64::INFINITY, f64::min);
    let magnitude = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if spread <= 1e-12 * magnitude {
        return Ok(Hyperparams {
            signal_variance: init.signal_variance,
            length_scale: cap,
            noise_variance: NOISE_FLOOR,
        });
    }

    let mean = train.value_mean();
    let v_scale = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / values.len() as f64)
        .max(1e-6);

    let dist_sq = grouped.dist_sq_matrix();
    // Closest spacing between distinct locations. Below roughly half of it
    // the kernel is effectively diagonal, so the likelihood cannot tell a
    // short length scale from white noise; keeping the bound at that spacing
    // makes the fitted scale identifiable at the sampling resolution.
    let mut d_min_sq = f64::INFINITY;
    let u = grouped.locations.len();
    for i in 0..u {
        for j in (i + 1)..u {
            d_min_sq = d_min_sq.min(dist_sq[(i, j)]);
        }
    }
    let l_floor = if d_min_sq.is_finite() {
        0.5 * d_min_sq.sqrt()
    } else {
        0.0
    };

    let lo = Vector3::new(
        (1e-4 * v_scale).ln(),
        (1e-2 * l_scale).max(l_floor).min(0.5 * cap).ln(),
        NOISE_FLOOR.ln(),
    );
    let hi = Vector3::new(
        (1e4 * v_scale).ln(),
        cap.ln(),
        (100.0 * v_scale).max(1.0).ln(),
    );

    // Negated likelihood: the inner loop minimizes. The line search only
    // needs objective values, so it gets a cheaper gradient-free evaluation.
    let eval_value = |x: Vector3<f64>| {
        let h = Hyperparams::from_log([x[0], x[1], x[2]]);
        -log_marginal_value(&grouped, &dist_sq, &h)
    };
    let eval_grad = |x: Vector3<f64>| {
        let h = Hyperparams::from_log([x[0], x[1], x[2]]);
        let lml = log_marginal_grouped(&grouped, &dist_sq, &h);
        (-lml.value, -Vector3::from_column_slice(&lml.grad))
    };

    let clamp = |x: Vector3<f64>| {
        Vector3::from_fn(|i, _| x[i].clamp(lo[i], hi[i]))
    };

    let mut starts = vec![clamp(Vector3::from_column_slice(&init.to_log()))];
    for _ in 0..opts.restarts {
        // Log-uniform draws over [0.1, 10] x data scale, clipped to bounds.
        let draw = |rng: &mut dyn rand::RngCore, scale: f64, i: usize| -> f64 {
            let a = (0.1 * scale).ln().clamp(lo[i], hi[i]);
            let b = (10.0 * scale).ln().clamp(lo[i], hi[i]);
            a + rng.random::<f64>() * (b - a)
        };
        let sf2 = draw(rng, v_scale, 0);
        let l = draw(rng, l_scale, 1);
        let sn2 = draw(rng, v_scale, 2);
        starts.push(Vector3::new(sf2, l, sn2));
    }

    let mut best: Option<(Vector3<f64>, f64)> = None;
    for start in starts {
        let (x, f) = minimize_bfgs(
            &eval_value,
            &eval_grad,
            &clamp,
            start,
            opts.max_iters,
            opts.grad_tol,
        );
        if f.is_finite() && best.map_or(true, |(_, fb)| f < fb) {
            best = Some((x, f));
        }
    }
    // Every run only accepts improving steps, so the run seeded at `init`
    // guarantees best >= lml(init) whenever init itself evaluates finitely.
    let (x, _) = best.unwrap_or((clamp(Vector3::from_column_slice(&init.to_log())), 0.0));
    Ok(Hyperparams::from_log([x[0], x[1], x[2]]))
}

/// Bounding-box diagonal of the distinct training locations.
fn spatial_extent(grouped: &Grouped) -> f64 {
    let mut min = (f64::INFINITY, f64::INFINITY);
    let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &grouped.locations {
        min = (min.0.min(p.x), min.1.min(p.y));
        max = (max.0.max(p.x), max.1.max(p.y));
    }
    let dx = max.0 - min.0;
    let dy = max.1 - min.1;
    (dx * dx + dy * dy).sqrt()
}

/// Projected BFGS with backtracking line search on a 3-parameter box.
fn minimize_bfgs(
    eval_value: &impl Fn(Vector3<f64>) -> f64,
    eval_grad: &impl Fn(Vector3<f64>) -> (f64, Vector3<f64>),
    clamp: &impl Fn(Vector3<f64>) -> Vector3<f64>,
    start: Vector3<f64>,
    max_iters: u32,
    grad_tol: f64,
) -> (Vector3<f64>, f64) {
    let mut x = clamp(start);
    let (mut f, mut g) = eval_grad(x);
    if !f.is_finite() {
        return (x, f);
    }
    let mut h_inv = Matrix3::identity();
    for _ in 0..max_iters {
        if g.norm() < grad_tol {
            break;
        }
        let mut d = -(h_inv * g);
        if d.dot(&g) >= 0.0 {
            // The approximation lost descent quality; restart from steepest.
            h_inv = Matrix3::identity();
            d = -g;
        }
        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..30 {
            let x_new = clamp(x + t * d);
            let step = x_new - x;
            if step.norm() < 1e-14 {
                break;
            }
            let f_new = eval_value(x_new);
            let armijo = f + 1e-4 * g.dot(&step).min(0.0);
            if f_new.is_finite() && f_new <= armijo {
                accepted = Some((x_new, f_new));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            break;
        };
        // The gradient is only needed at points the line search accepts.
        let (_, g_new) = eval_grad(x_new);
        let s = x_new - x;
        let y = g_new - g;
        let sy = s.dot(&y);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let a = Matrix3::identity() - rho * s * y.transpose();
            h_inv = a * h_inv * a.transpose() + rho * s * s.transpose();
        } else {
            h_inv = Matrix3::identity();
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
    (x, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::log_marginal_likelihood;
    use crate::grid::Point;
    use nalgebra::{Cholesky, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn pt(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    /// Draws one sample path of a GP with the given hyperparameters.
    fn sample_gp(locs: &[Point], h: &Hyperparams, seed: u64) -> Vec<f64> {
        let gram = crate::gp::gram_matrix(locs, h);
        let chol = Cholesky::new(gram).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = DVector::from_iterator(
            locs.len(),
            (0..locs.len()).map(|_| StandardNormal.sample(&mut rng)),
        );
        (chol.l() * eps).iter().cloned().collect()
    }

    #[test]
    fn recovers_known_hyperparameters_within_factor_two() {
        let truth = Hyperparams::new(4.0, 2.0, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let locs: Vec<Point> = (0..50)
            .map(|_| pt(rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0))
            .collect();
        let vals = sample_gp(&locs, &truth, 99);
        let train = TrainingSet::from_parts(locs, vals).unwrap();

        let init = Hyperparams::new(1.0, 1.0, 1.0).unwrap();
        let fitted = fit_hyperparams(&train, &init, &FitOptions::default(), &mut rng).unwrap();
        assert!(
            fitted.length_scale > 1.0 && fitted.length_scale < 4.0,
            "length scale {} not within factor 2 of 2.0",
            fitted.length_scale
        );
        let lml_fit = log_marginal_likelihood(&train, &fitted).unwrap().value;
        let lml_true = log_marginal_likelihood(&train, &truth).unwrap().value;
        assert!(
            lml_fit >= lml_true - 1e-6,
            "fitted lml {lml_fit} below truth {lml_true}"
        );
    }

    #[test]
    fn fitted_likelihood_never_drops_below_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let locs: Vec<Point> = (0..12)
            .map(|_| pt(rng.random::<f64>() * 6.0, rng.random::<f64>() * 9.0))
            .collect();
        let vals: Vec<f64> = (0..12).map(|i| -60.0 + (i as f64 * 1.7).sin() * 8.0).collect();
        let train = TrainingSet::from_parts(locs, vals).unwrap();
        for seed in 0..4u64 {
            let mut fit_rng = ChaCha8Rng::seed_from_u64(seed);
            let init = Hyperparams::new(2.0 + seed as f64, 0.7, 2.0).unwrap();
            let fitted =
                fit_hyperparams(&train, &init, &FitOptions::default(), &mut fit_rng).unwrap();
            let lml_fit = log_marginal_likelihood(&train, &fitted).unwrap().value;
            let lml_init = log_marginal_likelihood(&train, &init).unwrap().value;
            assert!(lml_fit >= lml_init - 1e-9);
        }
    }

    #[test]
    fn constant_observations_cap_length_scale_and_floor_noise() {
        let train = TrainingSet::from_parts(
            vec![pt(0.0, 0.0), pt(5.0, 3.0)],
            vec![-60.0, -60.0],
        )
        .unwrap();
        let init = Hyperparams::new(10.0, 1.0, 0.5).unwrap();
        let cap = (10.0f64 * 10.0 + 15.0 * 15.0).sqrt();
        let opts = FitOptions {
            length_scale_cap: Some(cap),
            ..FitOptions::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fitted = fit_hyperparams(&train, &init, &opts, &mut rng).unwrap();
        assert_eq!(fitted.signal_variance, 10.0);
        assert_eq!(fitted.length_scale, cap);
        assert_eq!(fitted.noise_variance, NOISE_FLOOR);
    }

    #[test]
    fn zero_restarts_is_deterministic_and_ignores_rng() {
        let locs = vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(0.0, 2.0), pt(3.0, 1.0)];
        let vals = vec![-55.0, -58.0, -61.0, -64.0];
        let train = TrainingSet::from_parts(locs, vals).unwrap();
        let init = Hyperparams::new(5.0, 1.5, 0.8).unwrap();
        let opts = FitOptions {
            restarts: 0,
            ..FitOptions::default()
        };
        let mut rng_a = ChaCha8Rng::seed_from_u64(1);
        let mut rng_b = ChaCha8Rng::seed_from_u64(999);
        let a = fit_hyperparams(&train, &init, &opts, &mut rng_a).unwrap();
        let b = fit_hyperparams(&train, &init, &opts, &mut rng_b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let train = TrainingSet::from_parts(vec![pt(0.0, 0.0)], vec![-50.0]).unwrap();
        let init = Hyperparams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match fit_hyperparams(&train, &init, &FitOptions::default(), &mut rng) {
            Err(GpError::InsufficientData(1)) => {}
            other => panic!("expected InsufficientData, got {other:?}"),
        }
    }
}
