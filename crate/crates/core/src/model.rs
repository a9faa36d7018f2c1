//! Shared domain types and the structure-inducing regularizers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::LinkFunction;
use crate::truncation::{TauRule, TruncationScheme};

/// Measurement pairs `(xᵢ, yᵢ)`; row `i` of the design is `xᵢᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    design: DMatrix<f64>,
    response: DVector<f64>,
}

impl SampleSet {
    pub fn new(design: DMatrix<f64>, response: DVector<f64>) -> Result<Self> {
        if design.nrows() != response.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows but response has {} entries",
                design.nrows(),
                response.len()
            )));
        }
        if design.nrows() == 0 || design.ncols() == 0 {
            return Err(Error::Empty("sample set"));
        }
        if design.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("design"));
        }
        if response.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("response"));
        }
        Ok(SampleSet { design, response })
    }

    pub fn n_samples(&self) -> usize {
        self.design.nrows()
    }

    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DVector<f64>) {
        (self.design, self.response)
    }

    /// Applies a design truncation and an optional response clip. Thresholds
    /// are resolved against this set's `N` and `d`.
    pub fn truncated(
        &self,
        scheme: &TruncationScheme,
        response_clip: Option<&TauRule>,
    ) -> Result<SampleSet> {
        let design = scheme.apply(&self.design)?;
        let response = match response_clip {
            Some(rule) => {
                let tau = rule.resolve(self.n_samples(), self.dim())?;
                crate::truncation::clip_response(&self.response, tau)
            }
            None => self.response.clone(),
        };
        Ok(SampleSet { design, response })
    }
}

/// The signal that generated a data set. `shape` is set for matrix-valued
/// parameters, which are stored flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub theta_star: DVector<f64>,
    pub shape: Option<(usize, usize)>,
    pub eta: f64,
    /// Number of nonzeros, or the rank in matrix mode.
    pub sparsity: usize,
    pub link: LinkFunction,
}

impl GroundTruth {
    pub fn regularizer(&self) -> Regularizer {
        match self.shape {
            Some((rows, cols)) => Regularizer::Nuclear { rows, cols },
            None => Regularizer::L1,
        }
    }

    /// `η·θ*`, the vector the estimator targets.
    pub fn target(&self) -> DVector<f64> {
        &self.theta_star * self.eta
    }
}

/// Ψ in the estimator: ℓ1 for sparse vectors, nuclear norm for `rows × cols`
/// matrices flattened row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    L1,
    Nuclear { rows: usize, cols: usize },
}

impl Regularizer {
    pub fn check_len(&self, len: usize) -> Result<()> {
        match *self {
            Regularizer::L1 => Ok(()),
            Regularizer::Nuclear { rows, cols } if rows * cols == len && len > 0 => Ok(()),
            Regularizer::Nuclear { rows, cols } => Err(Error::DimensionMismatch(format!(
                "nuclear norm over {rows}x{cols} matrices needs a parameter of length {}, got {len}",
                rows * cols
            ))),
        }
    }

    pub fn value(&self, theta: &DVector<f64>) -> Result<f64> {
        self.check_len(theta.len())?;
        Ok(match *self {
            Regularizer::L1 => theta.lp_norm(1),
            Regularizer::Nuclear { rows, cols } => {
                singular_values(&unflatten(theta, rows, cols)).iter().sum()
            }
        })
    }

    /// `argmin_u ½‖u − v‖² + t·Ψ(u)`.
    pub fn prox(&self, v: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        self.check_len(v.len())?;
        if !(t >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "prox weight must be nonnegative, got {t}"
            )));
        }
        if t == 0.0 {
            return Ok(v.clone());
        }
        Ok(match *self {
            Regularizer::L1 => v.map(|x| soft_threshold(x, t)),
            Regularizer::Nuclear { rows, cols } => {
                let mut svd = unflatten(v, rows, cols).svd(true, true);
                svd.singular_values.apply(|s| *s = (*s - t).max(0.0));
                let m = svd.recompose().expect("svd computed with both factors");
                flatten(&m)
            }
        })
    }
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Row-major `rows × cols` view of a flat parameter.
pub fn unflatten(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, v.as_slice())
}

pub fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.transpose().iter().copied())
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().svd(false, false).singular_values
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepInit {
    /// `1/L̂` with `L̂` from power iteration on the Gram matrix.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    /// A run only counts as converged once the KKT residual is at most this.
    pub kkt_tol: f64,
    pub step_init: StepInit,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 20_000,
            rel_tol: 1e-9,
            kkt_tol: 1e-6,
            step_init: StepInit::Auto,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter(
                "max_iters must be at least 1".into(),
            ));
        }
        if !(self.rel_tol > 0.0) || !(self.kkt_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "rel_tol and kkt_tol must be positive".into(),
            ));
        }
        if let StepInit::Fixed(step) = self.step_init {
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "step size must be positive, got {step}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub lambda: f64,
    pub truncation: TruncationScheme,
    pub response_clip: Option<TauRule>,
    pub regularizer: Regularizer,
    pub solver: SolverOptions,
}

impl EstimatorConfig {
    /// Untruncated fit with default solver controls.
    pub fn new(lambda: f64, regularizer: Regularizer) -> Self {
        EstimatorConfig {
            lambda,
            truncation: TruncationScheme::None,
            response_clip: None,
            regularizer,
            solver: SolverOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be nonnegative and finite, got {}",
                self.lambda
            )));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub theta_hat: DVector<f64>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
}

/// `(1/N) Σ (<xᵢ, θ> − yᵢ)² + λ Ψ(θ)` on samples that are already truncated.
pub fn objective(
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
    let residual = samples.design() * theta - samples.response();
    let loss = residual.norm_squared() / samples.n_samples() as f64;
    Ok(loss + config.lambda * config.regularizer.value(theta)?)
}
