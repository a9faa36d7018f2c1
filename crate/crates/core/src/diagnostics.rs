//! Data diagnostics: moment and small-ball estimates, Gaussian mean widths,
//! the scaling constant, rate shapes and recovery error metrics.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{singular_values, unflatten, GroundTruth};
use crate::sampling::rng_from_seed;

/// Default number of random directions added to the coordinate directions
/// when estimating the directional fourth moment.
pub const DEFAULT_DIRECTIONS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentProfile {
    /// Smallest eigenvalue of the empirical second-moment matrix.
    pub kappa_hat: f64,
    /// Largest empirical `E<x, v>⁴` over the probed directions; a lower bound
    /// on the supremum over the sphere.
    pub nu_hat: f64,
    /// Largest `(mean |·|^q)^{1/q}` over design coordinates and the response.
    pub nu_q_hat: f64,
    pub q: f64,
    /// `kappa_hat` is numerically zero.
    pub degenerate: bool,
}

pub fn estimate_moments(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    q: f64,
    n_dirs: usize,
    seed: u64,
) -> Result<MomentProfile> {
    if !(q >= 2.0) {
        return Err(Error::InvalidParameter(format!(
            "moment order must be >= 2, got {q}"
        )));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows but response has {} entries",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::Empty("design"));
    }
    let (n, d) = (x.nrows() as f64, x.ncols());

    let second = x.tr_mul(x) / n;
    let eig = second.symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let scale = hi.abs().max(f64::MIN_POSITIVE);
    if lo < -1e-10 * scale.max(1.0) {
        return Err(Error::NotPositiveSemidefinite(lo));
    }
    let degenerate = lo <= 1e-12 * scale;
    let kappa_hat = if degenerate { 0.0 } else { lo };

    let mut rng = rng_from_seed(seed);
    let mut dirs = DMatrix::zeros(d, d + n_dirs);
    dirs.view_mut((0, 0), (d, d)).fill_with_identity();
    for k in d..d + n_dirs {
        let mut col = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
        dirs.set_column(k, &col);
    }
    let projections = x * dirs;
    let nu_hat = projections
        .column_iter()
        .map(|c| c.iter().map(|v| v.powi(4)).sum::<f64>() / n)
        .fold(0.0, f64::max);

    let q_norm = |it: &mut dyn Iterator<Item = f64>| -> f64 {
        (it.map(|v| v.abs().powf(q)).sum::<f64>() / n).powf(1.0 / q)
    };
    let nu_q_design = x
        .column_iter()
        .map(|c| q_norm(&mut c.iter().copied()))
        .fold(0.0, f64::max);
    let nu_q_hat = nu_q_design.max(q_norm(&mut y.iter().copied()));

    Ok(MomentProfile {
        kappa_hat,
        nu_hat,
        nu_q_hat,
        q,
        degenerate,
    })
}

/// Small-ball level `δ` and mass `Q`: `Pr(|<x, v>| ≥ 2δ‖v‖) ≥ 2Q` for every `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallBall {
    pub delta: f64,
    pub mass: f64,
}

/// `δ = ½√(κ/2)` and `Q = κ²/(8ν)`.
pub fn small_ball_params(profile: &MomentProfile) -> Result<SmallBall> {
    let (kappa, nu) = (profile.kappa_hat, profile.nu_hat);
    if !(kappa > 0.0) || !(nu > 0.0) {
        return Err(Error::Degenerate(format!(
            "small-ball constants need positive kappa and nu (got {kappa}, {nu})"
        )));
    }
    Ok(SmallBall {
        delta: 0.5 * (kappa / 2.0).sqrt(),
        mass: kappa * kappa / (8.0 * nu),
    })
}

/// Fraction of rows with `|<xᵢ, v>| ≥ threshold`.
pub fn empirical_small_ball(x: &DMatrix<f64>, v: &DVector<f64>, threshold: f64) -> Result<f64> {
    if v.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "direction has length {} but design has {} columns",
            v.len(),
            x.ncols()
        )));
    }
    if (v.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter(
            "direction must have unit norm".into(),
        ));
    }
    if !(threshold >= 0.0) {
        return Err(Error::InvalidParameter(
            "threshold must be nonnegative".into(),
        ));
    }
    if x.nrows() == 0 {
        return Err(Error::Empty("design"));
    }
    let hits = (x * v).iter().filter(|p| p.abs() >= threshold).count();
    Ok(hits as f64 / x.nrows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanWidthSet {
    L2Ball { r: f64 },
    L1Ball { rho: f64 },
    L1L2Intersection { rho: f64, r: f64 },
    NuclearBall { rho: f64, rows: usize, cols: usize },
}

/// `sup_{t ∈ T} <g, t>`.
pub fn support_function(set: &MeanWidthSet, g: &[f64]) -> f64 {
    match *set {
        MeanWidthSet::L2Ball { r } => r * g.iter().map(|v| v * v).sum::<f64>().sqrt(),
        MeanWidthSet::L1Ball { rho } => rho * g.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        MeanWidthSet::L1L2Intersection { rho, r } => {
            let mut mags: Vec<f64> = g.iter().map(|v| v.abs()).collect();
            intersection_support(&mut mags, rho, r)
        }
        MeanWidthSet::NuclearBall { rho, rows, cols } => {
            let m = unflatten(&DVector::from_column_slice(g), rows, cols);
            rho * singular_values(&m).iter().fold(0.0f64, |a, &b| a.max(b))
        }
    }
}

/// `min_{c ≥ 0} ρc + r‖(|g| − c)₊‖₂`, the support function of
/// `ρ·B₁ ∩ r·B₂` written as an infimal convolution.
///
/// The objective is convex in `c` with breakpoints at the `|gⱼ|`. The best
/// breakpoint is found by a scan with prefix sums, then both neighbouring
/// segments are refined by golden-section search.
fn intersection_support(mags: &mut [f64], rho: f64, r: f64) -> f64 {
    if mags.is_empty() {
        return 0.0;
    }
    mags.sort_by(|a, b| b.total_cmp(a));
    let phi = |c: f64| -> f64 {
        let tail: f64 = mags
            .iter()
            .take_while(|&&a| a > c)
            .map(|a| (a - c) * (a - c))
            .sum();
        rho * c + r * tail.sqrt()
    };
    // candidates: c = 0 and c = a_k; at c = a_k the active set is a_1..a_{k-1}
    let mut knots = Vec::with_capacity(mags.len() + 1);
    knots.push(0.0);
    knots.extend(mags.iter().rev().copied());
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut values = vec![0.0; mags.len() + 1];
    // walk from the largest knot down so prefix sums over active entries grow
    for (k, &a) in mags.iter().enumerate() {
        let active = k as f64;
        let q = (s2 - 2.0 * a * s1 + active * a * a).max(0.0);
        values[mags.len() - k] = rho * a + r * q.sqrt();
        s1 += a;
        s2 += a * a;
    }
    let q0 = s2.max(0.0);
    values[0] = r * q0.sqrt();

    let best = (0..values.len())
        .min_by(|&i, &j| values[i].total_cmp(&values[j]))
        .expect("nonempty");
    let mut out = values[best];
    for (lo, hi) in [
        (best.checked_sub(1).map(|i| knots[i]), Some(knots[best])),
        (Some(knots[best]), knots.get(best + 1).copied()),
    ] {
        if let (Some(lo), Some(hi)) = (lo, hi) {
            if hi > lo {
                out = out.min(golden_section(&phi, lo, hi));
            }
        }
    }
    out
}

fn golden_section(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..90 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        }
    }
    fa.min(fb)
}

/// Monte-Carlo estimate of `E sup_{t ∈ T} <g, t>` over `n_draws` standard
/// Gaussian vectors. Deterministic in `(set, d, n_draws, seed)`.
pub fn gaussian_mean_width(set: &MeanWidthSet, d: usize, n_draws: usize, seed: u64) -> Result<f64> {
    if n_draws == 0 {
        return Err(Error::InvalidParameter("n_draws must be at least 1".into()));
    }
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    if let MeanWidthSet::NuclearBall { rows, cols, .. } = *set {
        if rows * cols != d {
            return Err(Error::DimensionMismatch(format!(
                "nuclear ball over {rows}x{cols} matrices lives in dimension {}, got {d}",
                rows * cols
            )));
        }
    }
    let mut rng = rng_from_seed(seed);
    let mut g = vec![0.0; d];
    let mut total = 0.0;
    for _ in 0..n_draws {
        g.iter_mut()
            .for_each(|v| *v = StandardNormal.sample(&mut rng));
        total += support_function(set, &g);
    }
    Ok(total / n_draws as f64)
}

/// `min_k { r√((k−1)·ln(e·d/(k−1))) + ρ√(ln(e·d/k)) }` over `k = 1..=d`, the
/// shape of the known upper bound on the width of `ρB₁ ∩ rB₂` without its
/// absolute constant. The first term is zero at `k = 1`.
pub fn l1l2_width_bound_shape(rho: f64, r: f64, d: usize) -> f64 {
    let ed = std::f64::consts::E * d as f64;
    (1..=d)
        .map(|k| {
            let head = if k == 1 {
                0.0
            } else {
                let km1 = (k - 1) as f64;
                r * (km1 * (ed / km1).ln()).sqrt()
            };
            head + rho * (ed / k as f64).ln().sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaEstimate {
    pub eta: f64,
    pub std_error: f64,
    /// `|η̂|` is within three standard errors of zero.
    pub degenerate: bool,
}

/// `η̂ = (1/N) Σ yᵢ<xᵢ, θ*> / θ*ᵀΣθ*`.
pub fn estimate_eta(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    theta_star: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<EtaEstimate> {
    if x.nrows() != y.len()
        || x.ncols() != theta_star.len()
        || sigma.shape() != (x.ncols(), x.ncols())
    {
        return Err(Error::DimensionMismatch(
            "estimate_eta needs matching design, response, θ* and Σ".into(),
        ));
    }
    if x.nrows() == 0 {
        return Err(Error::Empty("design"));
    }
    let denom = theta_star.dot(&(sigma * theta_star));
    if denom == 0.0 {
        return Err(Error::Degenerate("θ*ᵀΣθ* is zero".into()));
    }
    let n = x.nrows() as f64;
    let terms = (x * theta_star).component_mul(y);
    let mean = terms.sum() / n;
    let var = terms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
    let se = (var / n).sqrt();
    Ok(EtaEstimate {
        eta: mean / denom,
        std_error: se / denom.abs(),
        degenerate: mean.abs() <= 3.0 * se,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMode {
    SparseL2,
    SparseL1,
    LowRankL2,
    LowRankNuclear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProblemDims {
    Vector(usize),
    Matrix(usize, usize),
}

impl ProblemDims {
    pub fn total(&self) -> usize {
        match *self {
            ProblemDims::Vector(d) => d,
            ProblemDims::Matrix(m, n) => m * n,
        }
    }
}

impl std::fmt::Display for ProblemDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProblemDims::Vector(d) => write!(f, "{d}"),
            ProblemDims::Matrix(m, n) => write!(f, "{m}x{n}"),
        }
    }
}

impl std::str::FromStr for ProblemDims {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse dimension `{s}`"));
        match s.split_once('x') {
            Some((m, n)) => Ok(ProblemDims::Matrix(
                m.parse().map_err(|_| bad())?,
                n.parse().map_err(|_| bad())?,
            )),
            None => Ok(ProblemDims::Vector(s.parse().map_err(|_| bad())?)),
        }
    }
}

/// Error-rate shapes, up to constants:
/// `√(s·ln(ed)/N)`, `s·√(ln(ed)/N)`, `√(s(m+n)/N)`, `s·√((m+n)/N)`.
pub fn theoretical_rate(mode: RateMode, s: usize, dims: ProblemDims, n: usize) -> Result<f64> {
    let (s, nf) = (s as f64, n as f64);
    match (mode, dims) {
        (RateMode::SparseL2 | RateMode::SparseL1, dims) => {
            let log_ed = 1.0 + (dims.total() as f64).ln();
            Ok(match mode {
                RateMode::SparseL2 => (s * log_ed / nf).sqrt(),
                _ => s * (log_ed / nf).sqrt(),
            })
        }
        (RateMode::LowRankL2, ProblemDims::Matrix(m, k)) => Ok((s * (m + k) as f64 / nf).sqrt()),
        (RateMode::LowRankNuclear, ProblemDims::Matrix(m, k)) => {
            Ok(s * ((m + k) as f64 / nf).sqrt())
        }
        (_, ProblemDims::Vector(_)) => Err(Error::DimensionMismatch(
            "low-rank rates need matrix dimensions".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    /// `‖θ̂ − ηθ*‖₂`.
    pub l2: f64,
    /// `Ψ(θ̂ − ηθ*)`.
    pub psi: f64,
    /// Cosine between θ̂ and θ*; zero when θ̂ = 0.
    pub cosine: f64,
}

pub fn error_metrics(theta_hat: &DVector<f64>, truth: &GroundTruth) -> Result<ErrorMetrics> {
    if theta_hat.len() != truth.theta_star.len() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has length {} but θ* has length {}",
            theta_hat.len(),
            truth.theta_star.len()
        )));
    }
    let diff = theta_hat - truth.target();
    let norms = theta_hat.norm() * truth.theta_star.norm();
    let cosine = if norms == 0.0 {
        0.0
    } else {
        (theta_hat.dot(&truth.theta_star) / norms).clamp(-1.0, 1.0)
    };
    Ok(ErrorMetrics {
        l2: diff.norm(),
        psi: truth.regularizer().value(&diff)?,
        cosine,
    })
}
