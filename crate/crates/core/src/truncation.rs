//! Truncation rules for heavy-tailed measurements.
//!
//! Two design rules are supported: entrywise clipping, used for sparse recovery
//! with general designs, and row-norm clipping, used for elliptical designs in
//! the single-index model. The response is always clipped entrywise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold for sparse recovery with general designs: `(N / ln(e·d))^{1/4}`.
pub fn tau_sparse(n: usize, d: usize) -> f64 {
    assert!(n >= 1 && d >= 1, "tau_sparse needs n, d >= 1");
    let log_ed = 1.0 + (d as f64).ln();
    (n as f64 / log_ed).powf(0.25)
}

/// Threshold for elliptical designs with `q` finite moments: `N^{2/(q+4)}`.
pub fn tau_elliptical(n: usize, q: f64) -> Result<f64> {
    if !(q > 4.0) {
        return Err(Error::InvalidParameter(format!(
            "moment order q must exceed 4, got {q}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    Ok((n as f64).powf(2.0 / (q + 4.0)))
}

/// `sign(x)·min(|x|, tau)` for every entry. `sign(0) = 0`.
pub fn entrywise_truncate(x: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    assert!(tau > 0.0, "tau must be positive");
    x.map(|v| v.clamp(-tau, tau))
}

/// Shrinks every row with `‖xᵢ‖₂ > √d·tau` onto the sphere of that radius.
/// Shorter rows, including the zero row, pass unchanged.
pub fn norm_truncate(x: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    assert!(tau > 0.0, "tau must be positive");
    let limit = (x.ncols() as f64).sqrt() * tau;
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        if norm > limit {
            row *= limit / norm;
        }
    }
    out
}

pub fn clip_response(y: &DVector<f64>, tau: f64) -> DVector<f64> {
    assert!(tau > 0.0, "tau must be positive");
    y.map(|v| v.clamp(-tau, tau))
}

/// How a threshold is chosen: a fixed value or one of the two rate-driven
/// formulas evaluated at the sample size and dimension of the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauRule {
    Fixed(f64),
    Sparse,
    Elliptical { q: f64 },
}

impl TauRule {
    pub fn resolve(&self, n: usize, d: usize) -> Result<f64> {
        match *self {
            TauRule::Fixed(tau) if tau > 0.0 && tau.is_finite() => Ok(tau),
            TauRule::Fixed(tau) => Err(Error::InvalidParameter(format!(
                "tau must be positive and finite, got {tau}"
            ))),
            TauRule::Sparse => Ok(tau_sparse(n, d)),
            TauRule::Elliptical { q } => tau_elliptical(n, q),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationScheme {
    None,
    Entrywise(TauRule),
    NormBased(TauRule),
}

impl TruncationScheme {
    pub fn tag(&self) -> &'static str {
        match self {
            TruncationScheme::None => "none",
            TruncationScheme::Entrywise(_) => "entrywise",
            TruncationScheme::NormBased(_) => "norm_based",
        }
    }

    /// Threshold this scheme uses on an `n × d` design, `None` when untruncated.
    pub fn resolve_tau(&self, n: usize, d: usize) -> Result<Option<f64>> {
        match self {
            TruncationScheme::None => Ok(None),
            TruncationScheme::Entrywise(rule) | TruncationScheme::NormBased(rule) => {
                rule.resolve(n, d).map(Some)
            }
        }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let tau = self.resolve_tau(x.nrows(), x.ncols())?;
        Ok(match (self, tau) {
            (TruncationScheme::Entrywise(_), Some(tau)) => entrywise_truncate(x, tau),
            (TruncationScheme::NormBased(_), Some(tau)) => norm_truncate(x, tau),
            _ => x.clone(),
        })
    }
}
