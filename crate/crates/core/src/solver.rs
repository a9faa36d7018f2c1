//! Proximal-gradient solver for the thresholded least-squares program and the
//! estimator pipelines built on it.
//!
//! The smooth part `(1/N)‖X̃θ − ỹ‖²` is reduced once to its Gram form
//! `θᵀGθ − 2cᵀθ + m` with `G = X̃ᵀX̃/N`, `c = X̃ᵀỹ/N`, `m = ‖ỹ‖²/N`, so every
//! iteration costs `O(d²)` regardless of `N`.
//!
//! The iteration is accelerated proximal gradient with backtracking. A step that
//! would raise the objective resets the momentum and is replaced by a plain
//! proximal step from the current iterate, so the recorded objective trace never
//! increases.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    unflatten, EstimatorConfig, RecoveryResult, Regularizer, SampleSet, SolverOptions, StepInit,
};
use crate::truncation::{tau_elliptical, tau_sparse, TauRule, TruncationScheme};

const POWER_ITERATIONS: usize = 50;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub result: RecoveryResult,
    pub lambda_used: f64,
    /// Design threshold; `None` when the design is not truncated.
    pub tau_used: Option<f64>,
    pub truncation_kind: &'static str,
    pub wall_time: Duration,
}

/// Gram-form smooth loss.
#[derive(Debug, Clone)]
pub(crate) struct Quadratic {
    gram: DMatrix<f64>,
    cross: DVector<f64>,
    mean_sq: f64,
}

impl Quadratic {
    pub(crate) fn new(samples: &SampleSet) -> Self {
        let n = samples.n_samples() as f64;
        let x = samples.design();
        let y = samples.response();
        Quadratic {
            gram: x.tr_mul(x) / n,
            cross: x.tr_mul(y) / n,
            mean_sq: y.norm_squared() / n,
        }
    }

    fn dim(&self) -> usize {
        self.cross.len()
    }

    fn value_at(&self, theta: &DVector<f64>, g_theta: &DVector<f64>) -> f64 {
        theta.dot(g_theta) - 2.0 * self.cross.dot(theta) + self.mean_sq
    }

    pub(crate) fn value(&self, theta: &DVector<f64>) -> f64 {
        self.value_at(theta, &(&self.gram * theta))
    }

    pub(crate) fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        (&self.gram * theta - &self.cross) * 2.0
    }

    /// Largest eigenvalue of the Gram matrix by power iteration; a lower bound.
    fn top_eigenvalue(&self) -> f64 {
        let d = self.dim();
        let mut v = DVector::from_fn(d, |j, _| 1.0 + j as f64 / d as f64);
        v.normalize_mut();
        let mut estimate = 0.0;
        for _ in 0..POWER_ITERATIONS {
            let w = &self.gram * &v;
            let norm = w.norm();
            if norm == 0.0 {
                break;
            }
            estimate = v.dot(&w);
            v = w / norm;
        }
        estimate
    }
}

pub fn fit(samples: &SampleSet, config: &EstimatorConfig) -> Result<FitReport> {
    fit_from(samples, config, None)
}

/// [`fit`] with an explicit starting point instead of `θ = 0`.
pub fn fit_from(
    samples: &SampleSet,
    config: &EstimatorConfig,
    init: Option<&DVector<f64>>,
) -> Result<FitReport> {
    let start = Instant::now();
    config.validate()?;
    config.regularizer.check_len(samples.dim())?;
    let tau_used = config
        .truncation
        .resolve_tau(samples.n_samples(), samples.dim())?;
    let truncated = samples.truncated(&config.truncation, config.response_clip.as_ref())?;
    let quad = Quadratic::new(&truncated);
    let result = minimize(
        &quad,
        config.regularizer,
        config.lambda,
        &config.solver,
        init,
    )?;
    Ok(FitReport {
        result,
        lambda_used: config.lambda,
        tau_used,
        truncation_kind: config.truncation.tag(),
        wall_time: start.elapsed(),
    })
}

pub(crate) fn minimize(
    quad: &Quadratic,
    reg: Regularizer,
    lambda: f64,
    opts: &SolverOptions,
    init: Option<&DVector<f64>>,
) -> Result<RecoveryResult> {
    let d = quad.dim();
    if quad.gram.iter().all(|v| *v == 0.0) {
        return Err(Error::Degenerate(
            "truncated design is identically zero".into(),
        ));
    }
    let mut step = match opts.step_init {
        StepInit::Fixed(step) => step,
        StepInit::Auto => {
            let top = quad.top_eigenvalue();
            if !(top > 0.0) {
                return Err(Error::Degenerate(
                    "Gram matrix of the truncated design has no positive eigenvalue".into(),
                ));
            }
            1.0 / (2.0 * top)
        }
    };

    let total = |theta: &DVector<f64>, smooth: f64| -> Result<f64> {
        Ok(smooth + lambda * reg.value(theta)?)
    };

    let mut x = match init {
        Some(theta) if theta.len() == d => theta.clone(),
        Some(theta) => {
            return Err(Error::DimensionMismatch(format!(
                "initial point has length {}, expected {d}",
                theta.len()
            )))
        }
        None => DVector::zeros(d),
    };
    let mut fx = total(&x, quad.value(&x))?;
    if !fx.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: 0 });
    }
    let mut trace = vec![fx];
    let mut x_prev = x.clone();
    let mut momentum = 1.0f64;
    let mut quiet_steps = 0;
    let mut converged = false;
    let mut kkt = f64::INFINITY;
    let mut iterations = 0;

    // Backtracking proximal step from `y`. For a quadratic the sufficient-decrease
    // test `f(z) ≤ f(y) + <∇f(y), z − y> + ‖z − y‖²/2t` reads exactly
    // `(z − y)ᵀG(z − y) ≤ ‖z − y‖²/2t`, which avoids cancellation near the optimum.
    let prox_step = |y: &DVector<f64>, step: &mut f64| -> Result<DVector<f64>> {
        let gy = quad.grad(y);
        let mut halvings = 0;
        loop {
            let z = reg.prox(&(y - &gy * *step), *step * lambda)?;
            let diff = &z - y;
            let curvature = diff.dot(&(&quad.gram * &diff));
            if curvature <= diff.norm_squared() / (2.0 * *step) || halvings >= MAX_HALVINGS {
                return Ok(z);
            }
            *step *= 0.5;
            halvings += 1;
        }
    };
    // F(z) − F(x) evaluated as a difference rather than from two rounded totals
    let change = |z: &DVector<f64>, x: &DVector<f64>| -> Result<f64> {
        let smooth = (z - x).dot(&(&quad.gram * (z + x) - &quad.cross * 2.0));
        Ok(smooth + lambda * (reg.value(z)? - reg.value(x)?))
    };

    for iteration in 1..=opts.max_iters {
        iterations = iteration;
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let y = &x + (&x - &x_prev) * ((momentum - 1.0) / next_momentum);
        let mut z = prox_step(&y, &mut step)?;
        let mut delta = change(&z, &x)?;
        if !delta.is_finite() {
            return Err(Error::NonFiniteObjective { iteration });
        }
        momentum = next_momentum;
        if delta > 0.0 {
            // restart from x with a plain step; keep x if even that fails
            momentum = 1.0;
            let z2 = prox_step(&x, &mut step)?;
            let delta2 = change(&z2, &x)?;
            if !delta2.is_finite() {
                return Err(Error::NonFiniteObjective { iteration });
            }
            if delta2 <= 0.0 {
                z = z2;
                delta = delta2;
            } else {
                z = x.clone();
                delta = 0.0;
            }
        }
        let rel_change = delta.abs() / fx.abs().max(1.0);
        x_prev = std::mem::replace(&mut x, z);
        fx += delta;
        trace.push(fx);

        if rel_change < opts.rel_tol {
            quiet_steps += 1;
        } else {
            quiet_steps = 0;
        }
        if quiet_steps >= 2 {
            kkt = kkt_from_grad(reg, &x, &quad.grad(&x), lambda);
            if kkt <= opts.kkt_tol {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        kkt = kkt_from_grad(reg, &x, &quad.grad(&x), lambda);
    }
    Ok(RecoveryResult {
        theta_hat: x,
        objective_trace: trace,
        iterations,
        converged,
        kkt_residual: kkt,
    })
}

/// Distance from `−∇(smooth part)` to `λ·∂Ψ(θ)` on already-truncated samples.
///
/// For ℓ1 this is the largest coordinate violation, with `∂|0| = [−1, 1]`.
/// For the nuclear norm the negative gradient is split along the tangent space
/// of the current singular subspaces: its tangent part must equal `λUVᵀ` and
/// its complement must have spectral norm at most `λ`.
pub fn kkt_residual(
    samples: &SampleSet,
    theta: &DVector<f64>,
    config: &EstimatorConfig,
) -> Result<f64> {
    if theta.len() != samples.dim() {
        return Err(Error::DimensionMismatch(format!(
            "parameter has length {} but design has {} columns",
            theta.len(),
            samples.dim()
        )));
    }
    config.regularizer.check_len(theta.len())?;
    let x = samples.design();
    let residual = x * theta - samples.response();
    let grad = x.tr_mul(&residual) * (2.0 / samples.n_samples() as f64);
    Ok(kkt_from_grad(
        config.regularizer,
        theta,
        &grad,
        config.lambda,
    ))
}

pub(crate) fn kkt_from_grad(
    reg: Regularizer,
    theta: &DVector<f64>,
    grad: &DVector<f64>,
    lambda: f64,
) -> f64 {
    match reg {
        Regularizer::L1 => theta
            .iter()
            .zip(grad.iter())
            .map(|(&t, &g)| {
                if t == 0.0 {
                    (g.abs() - lambda).max(0.0)
                } else {
                    (g + lambda * t.signum()).abs()
                }
            })
            .fold(0.0, f64::max),
        Regularizer::Nuclear { rows, cols } => nuclear_kkt(
            &unflatten(theta, rows, cols),
            &-unflatten(grad, rows, cols),
            lambda,
        ),
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0, |a, &b| a.max(b))
}

fn nuclear_kkt(theta: &DMatrix<f64>, neg_grad: &DMatrix<f64>, lambda: f64) -> f64 {
    let svd = theta.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let top = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    let tol = 1e-9 * top.max(1.0);
    let active: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > tol)
        .collect();
    if active.is_empty() {
        return (spectral_norm(neg_grad) - lambda).max(0.0);
    }
    let u_r = u.select_columns(&active);
    let v_r = v_t.select_rows(&active).transpose();
    let pu = &u_r * u_r.transpose();
    let pv = &v_r * v_r.transpose();
    let left = &pu * neg_grad;
    let tangent = &left + neg_grad * &pv - &left * &pv - (&u_r * v_r.transpose()) * lambda;
    let eye_m = DMatrix::identity(pu.nrows(), pu.nrows());
    let eye_n = DMatrix::identity(pv.nrows(), pv.nrows());
    let complement = (eye_m - pu) * neg_grad * (eye_n - pv);
    spectral_norm(&tangent).max((spectral_norm(&complement) - lambda).max(0.0))
}

/// `λ = scale·√(ln(e·d)/N)`.
pub fn lambda_sparse(n: usize, d: usize, scale: f64) -> f64 {
    scale * ((1.0 + (d as f64).ln()) / n as f64).sqrt()
}

/// `λ = scale·√(ln(e·d/s)/N)` for ℓ1 and `scale·√(m+n)/√N` for the nuclear norm.
pub fn lambda_single_index(n: usize, reg: Regularizer, d: usize, s_hint: usize, scale: f64) -> f64 {
    match reg {
        Regularizer::L1 => {
            let s = s_hint.clamp(1, d.max(1)) as f64;
            scale * ((1.0 + (d as f64 / s).ln()) / n as f64).sqrt()
        }
        Regularizer::Nuclear { rows, cols } => {
            scale * ((rows + cols) as f64).sqrt() / (n as f64).sqrt()
        }
    }
}

fn check_scale(lambda_scale: f64) -> Result<()> {
    if lambda_scale > 0.0 && lambda_scale.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "lambda_scale must be positive, got {lambda_scale}"
        )))
    }
}

/// Sparse recovery from a general heavy-tailed design: entrywise truncation of
/// `X` and clipping of `y` at `tau_sparse(N, d)`, ℓ1 penalty with
/// `λ = lambda_scale·√(ln(e·d)/N)`.
pub fn fit_thresholded_lasso(
    raw: &SampleSet,
    lambda_scale: f64,
    opts: &SolverOptions,
) -> Result<FitReport> {
    check_scale(lambda_scale)?;
    let (n, d) = (raw.n_samples(), raw.dim());
    let tau = tau_sparse(n, d);
    let config = EstimatorConfig {
        lambda: lambda_sparse(n, d, lambda_scale),
        truncation: TruncationScheme::Entrywise(TauRule::Fixed(tau)),
        response_clip: Some(TauRule::Fixed(tau)),
        regularizer: Regularizer::L1,
        solver: *opts,
    };
    fit(raw, &config)
}

/// Single-index recovery from an elliptical design: row-norm truncation of `X`
/// and clipping of `y` at `tau_elliptical(N, q)`.
pub fn fit_single_index(
    raw: &SampleSet,
    q: f64,
    regularizer: Regularizer,
    lambda_scale: f64,
    s_hint: usize,
    opts: &SolverOptions,
) -> Result<FitReport> {
    check_scale(lambda_scale)?;
    let (n, d) = (raw.n_samples(), raw.dim());
    let tau = tau_elliptical(n, q)?;
    let config = EstimatorConfig {
        lambda: lambda_single_index(n, regularizer, d, s_hint, lambda_scale),
        truncation: TruncationScheme::NormBased(TauRule::Fixed(tau)),
        response_clip: Some(TauRule::Fixed(tau)),
        regularizer,
        solver: *opts,
    };
    fit(raw, &config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::objective;

    fn samples(rows: usize, cols: usize, x: &[f64], y: &[f64]) -> SampleSet {
        SampleSet::new(
            DMatrix::from_row_slice(rows, cols, x),
            DVector::from_column_slice(y),
        )
        .unwrap()
    }

    #[test]
    fn one_dimensional_closed_form() {
        // 2(θ − 2) + 1 = 0  →  θ = 1.5
        let s = samples(1, 1, &[1.0], &[2.0]);
        let cfg = EstimatorConfig::new(1.0, Regularizer::L1);
        let report = fit(&s, &cfg).unwrap();
        assert!(report.result.converged);
        assert!((report.result.theta_hat[0] - 1.5).abs() < 1e-9);
        assert!(kkt_residual(&s, &DVector::from_element(1, 1.5), &cfg).unwrap() <= 1e-10);
        assert_eq!(report.tau_used, None);
        assert_eq!(report.truncation_kind, "none");
    }

    #[test]
    fn dead_zone_gives_zero() {
        let s = samples(3, 2, &[1.0, 0.5, -1.0, 2.0, 0.3, 0.0], &[1.0, -2.0, 0.5]);
        let corr = s.design().tr_mul(s.response()) / 3.0;
        let bound = 2.0 * corr.amax();
        let cfg = EstimatorConfig::new(bound * 1.01, Regularizer::L1);
        let report = fit(&s, &cfg).unwrap();
        assert!(report.result.theta_hat.iter().all(|v| *v == 0.0));
        assert_eq!(kkt_residual(&s, &DVector::zeros(2), &cfg).unwrap(), 0.0);
    }

    #[test]
    fn kkt_positive_off_optimum() {
        let s = samples(2, 2, &[1.0, 0.0, 0.0, 1.0], &[1.0, 1.0]);
        let cfg = EstimatorConfig::new(0.1, Regularizer::L1);
        assert!(kkt_residual(&s, &DVector::from_vec(vec![3.0, -1.0]), &cfg).unwrap() > 0.0);
    }

    #[test]
    fn least_squares_when_lambda_zero() {
        let x = [1.0, 0.2, 0.1, -0.3, 1.0, 0.5, 0.4, 0.1, 1.2, 0.0, -0.5, 0.3];
        let s = samples(4, 3, &x, &[1.0, -0.5, 2.0, 0.25]);
        let mut cfg = EstimatorConfig::new(0.0, Regularizer::L1);
        cfg.solver.kkt_tol = 1e-11;
        let report = fit(&s, &cfg).unwrap();
        let xm = s.design();
        let normal = xm.tr_mul(xm).lu().solve(&xm.tr_mul(s.response())).unwrap();
        assert!((report.result.theta_hat - normal).amax() < 1e-9);
    }

    #[test]
    fn trace_never_increases() {
        let x: Vec<f64> = (0..40)
            .map(|k| ((k * 37 % 11) as f64 - 5.0) / 3.0)
            .collect();
        let y: Vec<f64> = (0..8).map(|k| (k as f64 - 3.5) * 0.7).collect();
        let s = samples(8, 5, &x, &y);
        let report = fit(&s, &EstimatorConfig::new(0.05, Regularizer::L1)).unwrap();
        let trace = &report.result.objective_trace;
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        let final_obj = objective(
            &s,
            &report.result.theta_hat,
            &EstimatorConfig::new(0.05, Regularizer::L1),
        )
        .unwrap();
        assert!((final_obj - trace.last().unwrap()).abs() < 1e-10);
    }

    #[test]
    fn zero_design_is_degenerate() {
        let s = samples(2, 2, &[0.0; 4], &[1.0, 2.0]);
        let err = fit(&s, &EstimatorConfig::new(0.1, Regularizer::L1)).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn nuclear_fit_satisfies_kkt() {
        let d = 6; // 2×3 matrices
        let n = 30;
        let x = DMatrix::from_fn(n, d, |i, j| (((i * 7 + j * 13) % 17) as f64 - 8.0) / 5.0);
        let truth = DVector::from_vec(vec![1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let s = SampleSet::new(x.clone(), &x * &truth).unwrap();
        let cfg = EstimatorConfig::new(0.3, Regularizer::Nuclear { rows: 2, cols: 3 });
        let report = fit(&s, &cfg).unwrap();
        assert!(report.result.converged, "{:?}", report.result.kkt_residual);
        assert!(kkt_residual(&s, &report.result.theta_hat, &cfg).unwrap() <= 1e-6);
    }

    #[test]
    fn lambda_shapes() {
        assert!((lambda_sparse(100, 1, 1.0) - 0.1).abs() < 1e-15);
        let nuc = Regularizer::Nuclear { rows: 20, cols: 5 };
        assert!((lambda_single_index(100, nuc, 100, 1, 2.0) - 1.0).abs() < 1e-15);
        // ln(e·d/s) with d = s is 1
        assert!((lambda_single_index(25, Regularizer::L1, 4, 4, 1.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn wrappers_validate_inputs() {
        let s = samples(2, 1, &[1.0, 2.0], &[1.0, 2.0]);
        let opts = SolverOptions::default();
        assert!(fit_thresholded_lasso(&s, 0.0, &opts).is_err());
        assert!(fit_single_index(&s, 4.0, Regularizer::L1, 1.0, 1, &opts).is_err());
        let r = fit_single_index(&s, 8.0, Regularizer::L1, 1.0, 1, &opts).unwrap();
        assert_eq!(r.truncation_kind, "norm_based");
        assert!((r.tau_used.unwrap() - 2f64.powf(1.0 / 6.0)).abs() < 1e-15);
    }
}
