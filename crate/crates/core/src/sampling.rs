//! Heavy-tailed data synthesis.
//!
//! Elliptical designs are drawn as `x = μ·B·U` with `U` uniform on the unit
//! sphere (a normalized standard Gaussian vector), `μ` an independent radial
//! variable and `Σ = BBᵀ`. With `normalize_radial` the radial law is rescaled
//! so that `E[μ²] = d`, which makes `cov(x) = Σ` exactly.
//!
//! Every sampler takes an explicit `u64` seed and draws from a ChaCha8 stream
//! seeded with it. Seeds for independent trials come from [`derive_seed`].

use std::f64::consts::{FRAC_2_PI, PI};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Pareto, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GroundTruth, SampleSet};

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of integers (cell parameters, trial index,
/// stream tag) into an independent child seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_sign(rng: &mut impl Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadialLaw {
    /// `μ² ~ χ²_d`: the Gaussian case.
    GaussianChi,
    /// Multivariate Student t radius; `q`-th moments are finite iff `df > q`.
    StudentRadial { df: f64 },
    /// `μ ∝ P` with `P ~ Pareto(1, alpha)`.
    ParetoRadial { alpha: f64 },
    /// `μ ≡ √d`.
    ConstantRadius,
}

impl RadialLaw {
    fn validate(&self) -> Result<()> {
        match *self {
            RadialLaw::StudentRadial { df } if !(df > 4.0) => Err(Error::InvalidParameter(
                format!("student radial law needs df > 4, got {df}"),
            )),
            RadialLaw::ParetoRadial { alpha } if !(alpha > 4.0) => Err(Error::InvalidParameter(
                format!("pareto radial law needs alpha > 4, got {alpha}"),
            )),
            _ => Ok(()),
        }
    }

    /// `E[μ²] / d` before normalization.
    fn second_moment_ratio(&self) -> f64 {
        match *self {
            RadialLaw::GaussianChi | RadialLaw::ConstantRadius => 1.0,
            RadialLaw::StudentRadial { df } => df / (df - 2.0),
            RadialLaw::ParetoRadial { alpha } => alpha / (alpha - 2.0),
        }
    }

    fn draw(&self, d: usize, normalize: bool, rng: &mut impl Rng) -> f64 {
        let df_d = d as f64;
        let chi_d = || ChiSquared::new(df_d).expect("d >= 1");
        match *self {
            RadialLaw::GaussianChi => chi_d().sample(rng).sqrt(),
            RadialLaw::ConstantRadius => df_d.sqrt(),
            RadialLaw::StudentRadial { df } => {
                let z = chi_d().sample(rng);
                let w = ChiSquared::new(df).expect("df validated").sample(rng);
                let scale = if normalize { df - 2.0 } else { df };
                (z * scale / w).sqrt()
            }
            RadialLaw::ParetoRadial { alpha } => {
                let p: f64 = Pareto::new(1.0, alpha)
                    .expect("alpha validated")
                    .sample(rng);
                let ratio = if normalize {
                    (alpha - 2.0) / alpha
                } else {
                    1.0
                };
                (df_d * ratio).sqrt() * p
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticalSpec {
    sigma_factor: DMatrix<f64>,
    pub radial: RadialLaw,
    pub normalize_radial: bool,
}

impl EllipticalSpec {
    /// `sigma_factor` is `B` with `Σ = BBᵀ`; it must be square with full rank.
    pub fn new(
        sigma_factor: DMatrix<f64>,
        radial: RadialLaw,
        normalize_radial: bool,
    ) -> Result<Self> {
        radial.validate()?;
        if !sigma_factor.is_square() || sigma_factor.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "shape factor must be square, got {}x{}",
                sigma_factor.nrows(),
                sigma_factor.ncols()
            )));
        }
        if sigma_factor.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("shape factor"));
        }
        let sv = sigma_factor.clone().svd(false, false).singular_values;
        let (lo, hi) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
        if !(lo > 1e-12 * hi) {
            return Err(Error::Degenerate(format!(
                "shape factor is rank deficient (singular values in [{lo:e}, {hi:e}])"
            )));
        }
        Ok(EllipticalSpec {
            sigma_factor,
            radial,
            normalize_radial,
        })
    }

    pub fn identity(d: usize, radial: RadialLaw) -> Result<Self> {
        Self::new(DMatrix::identity(d, d), radial, true)
    }

    /// Uses the Cholesky factor of a positive definite `sigma`.
    pub fn from_covariance(sigma: &DMatrix<f64>, radial: RadialLaw) -> Result<Self> {
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Degenerate("covariance is not positive definite".into()))?;
        Self::new(chol.l(), radial, true)
    }

    pub fn dim(&self) -> usize {
        self.sigma_factor.nrows()
    }

    pub fn sigma_factor(&self) -> &DMatrix<f64> {
        &self.sigma_factor
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let bbt = &self.sigma_factor * self.sigma_factor.transpose();
        if self.normalize_radial {
            bbt
        } else {
            bbt * self.radial.second_moment_ratio()
        }
    }
}

pub fn sample_elliptical(spec: &EllipticalSpec, n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    sample_elliptical_with(spec, n, &mut rng)
}

fn sample_elliptical_with(spec: &EllipticalSpec, n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let d = spec.dim();
    // rows μᵢ·Uᵢᵀ, then multiply by Bᵀ on the right
    let mut scaled = DMatrix::zeros(n, d);
    let mut g = vec![0.0; d];
    for i in 0..n {
        let norm = loop {
            g.iter_mut().for_each(|v| *v = normal(rng));
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                break norm;
            }
        };
        let mu = spec.radial.draw(d, spec.normalize_radial, rng);
        for (j, v) in g.iter().enumerate() {
            scaled[(i, j)] = mu * v / norm;
        }
    }
    if spec.sigma_factor == DMatrix::identity(d, d) {
        scaled
    } else {
        scaled * spec.sigma_factor.transpose()
    }
}

/// Marginal law for i.i.d. design entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryLaw {
    Gaussian,
    StudentT {
        df: f64,
    },
    /// `±P` with a fair random sign and `P ~ Pareto(1, alpha)`.
    SymmetricPareto {
        alpha: f64,
    },
}

impl EntryLaw {
    fn validate(&self) -> Result<()> {
        match *self {
            EntryLaw::StudentT { df } if !(df > 2.0) => Err(Error::InvalidParameter(format!(
                "student entries need df > 2 for a finite covariance, got {df}"
            ))),
            EntryLaw::SymmetricPareto { alpha } if !(alpha > 2.0) => Err(Error::InvalidParameter(
                format!("pareto entries need alpha > 2 for a finite covariance, got {alpha}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            EntryLaw::Gaussian => 1.0,
            EntryLaw::StudentT { df } => df / (df - 2.0),
            EntryLaw::SymmetricPareto { alpha } => alpha / (alpha - 2.0),
        }
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            EntryLaw::Gaussian => normal(rng),
            EntryLaw::StudentT { df } => StudentT::new(df).expect("df validated").sample(rng),
            EntryLaw::SymmetricPareto { alpha } => {
                let p: f64 = Pareto::new(1.0, alpha)
                    .expect("alpha validated")
                    .sample(rng);
                random_sign(rng) * p
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IidEntrySpec {
    pub law: EntryLaw,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DesignSpec {
    Elliptical(EllipticalSpec),
    Iid(IidEntrySpec),
}

impl DesignSpec {
    pub fn iid(law: EntryLaw, dim: usize) -> Result<Self> {
        law.validate()?;
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        Ok(DesignSpec::Iid(IidEntrySpec { law, dim }))
    }

    pub fn dim(&self) -> usize {
        match self {
            DesignSpec::Elliptical(spec) => spec.dim(),
            DesignSpec::Iid(spec) => spec.dim,
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        match self {
            DesignSpec::Elliptical(spec) => spec.covariance(),
            DesignSpec::Iid(spec) => DMatrix::identity(spec.dim, spec.dim) * spec.law.variance(),
        }
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        match self {
            DesignSpec::Elliptical(spec) => sample_elliptical_with(spec, n, rng),
            DesignSpec::Iid(spec) => {
                let mut x = DMatrix::zeros(n, spec.dim);
                for i in 0..n {
                    for j in 0..spec.dim {
                        x[(i, j)] = spec.law.draw(rng);
                    }
                }
                x
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Linear,
    Sign,
    Cubic,
    /// Named extra links: `square`, `abs`, `tanh`, `relu`.
    Custom(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLaw {
    None,
    Gaussian {
        sd: f64,
    },
    Student {
        df: f64,
        scale: f64,
    },
    /// `scale·(±P)` with `P ~ Pareto(1, alpha)`.
    Pareto {
        alpha: f64,
        scale: f64,
    },
}

impl NoiseLaw {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseLaw::None => true,
            NoiseLaw::Gaussian { sd } => sd >= 0.0 && sd.is_finite(),
            NoiseLaw::Student { df, scale } => df > 1.0 && scale >= 0.0 && scale.is_finite(),
            NoiseLaw::Pareto { alpha, scale } => alpha > 1.0 && scale >= 0.0 && scale.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "noise law {self:?} needs a finite first moment and a nonnegative scale"
            )))
        }
    }

    pub fn draw(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            NoiseLaw::None => 0.0,
            NoiseLaw::Gaussian { sd } => sd * normal(rng),
            NoiseLaw::Student { df, scale } => {
                let t: f64 = StudentT::new(df).expect("df validated").sample(rng);
                scale * t
            }
            NoiseLaw::Pareto { alpha, scale } => {
                let p: f64 = Pareto::new(1.0, alpha)
                    .expect("alpha validated")
                    .sample(rng);
                scale * random_sign(rng) * p
            }
        }
    }
}

/// `y = f(<x, θ*>, ξ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkFunction {
    pub kind: LinkKind,
    pub noise: NoiseLaw,
}

impl LinkFunction {
    pub fn new(kind: LinkKind, noise: NoiseLaw) -> Result<Self> {
        let link = LinkFunction { kind, noise };
        link.validate()?;
        Ok(link)
    }

    pub fn linear(noise: NoiseLaw) -> Self {
        LinkFunction {
            kind: LinkKind::Linear,
            noise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if let LinkKind::Custom(tag) = &self.kind {
            if !matches!(tag.as_str(), "square" | "abs" | "tanh" | "relu") {
                return Err(Error::InvalidParameter(format!("unknown link `{tag}`")));
            }
        }
        Ok(())
    }

    /// Noise enters additively inside `sign` and outside every other link.
    pub fn apply(&self, u: f64, xi: f64) -> f64 {
        match &self.kind {
            LinkKind::Linear => u + xi,
            LinkKind::Sign => sign(u + xi),
            LinkKind::Cubic => u * u * u + xi,
            LinkKind::Custom(tag) => {
                let core = match tag.as_str() {
                    "square" => u * u,
                    "abs" => u.abs(),
                    "tanh" => u.tanh(),
                    "relu" => u.max(0.0),
                    other => unreachable!("link `{other}` passed validation"),
                };
                core + xi
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalMode {
    /// `±1/√s` on the first `s` coordinates, alternating signs.
    UnitEntries,
    /// Uniform support, Gaussian magnitudes, unit ℓ2 norm.
    Random,
}

pub fn make_sparse_signal(d: usize, s: usize, mode: SignalMode, seed: u64) -> Result<DVector<f64>> {
    if s == 0 || s > d {
        return Err(Error::InvalidParameter(format!(
            "sparsity must be in 1..={d}, got {s}"
        )));
    }
    let mut theta = DVector::zeros(d);
    match mode {
        SignalMode::UnitEntries => {
            let v = 1.0 / (s as f64).sqrt();
            for j in 0..s {
                theta[j] = if j % 2 == 0 { v } else { -v };
            }
        }
        SignalMode::Random => {
            let mut rng = rng_from_seed(seed);
            let support = sample_indices(&mut rng, d, s);
            loop {
                for j in support.iter() {
                    theta[j] = normal(&mut rng);
                }
                let norm = theta.norm();
                if norm > 0.0 {
                    theta /= norm;
                    break;
                }
            }
        }
    }
    Ok(theta)
}

/// Product of Gaussian `m × rank` and `rank × n` factors scaled to unit
/// Frobenius norm.
pub fn make_low_rank_signal(m: usize, n: usize, rank: usize, seed: u64) -> Result<DMatrix<f64>> {
    if rank == 0 || rank > m.min(n) {
        return Err(Error::InvalidParameter(format!(
            "rank must be in 1..={}, got {rank}",
            m.min(n)
        )));
    }
    let mut rng = rng_from_seed(seed);
    let left = DMatrix::from_fn(m, rank, |_, _| normal(&mut rng));
    let right = DMatrix::from_fn(rank, n, |_, _| normal(&mut rng));
    let product = left * right;
    let norm = product.norm();
    Ok(product / norm)
}

const ETA_MC_DRAWS: usize = 1_000_000;

/// Scaling constant `η = E[y<x, θ*>] / ‖Σ^{1/2}θ*‖²` for data drawn from
/// `design` and `link`. Closed forms are used where known, otherwise a
/// Monte-Carlo average over `u = <x, θ*>`.
pub fn scaling_constant(
    design: &DesignSpec,
    link: &LinkFunction,
    theta_star: &DVector<f64>,
    seed: u64,
) -> Result<f64> {
    link.validate()?;
    let sigma = design.covariance();
    let quad = theta_star.dot(&(&sigma * theta_star));
    if !(quad > 0.0) {
        return Err(Error::Degenerate("θ*ᵀΣθ* is zero".into()));
    }
    if link.kind == LinkKind::Linear {
        return Ok(1.0);
    }
    if let DesignSpec::Elliptical(spec) = design {
        // with ‖Σ^{1/2}θ*‖ = 1 the index <x, θ*> is standard normal
        if spec.radial == RadialLaw::GaussianChi && (quad - 1.0).abs() < 1e-10 {
            match (&link.kind, link.noise) {
                (LinkKind::Sign, NoiseLaw::None) => return Ok(FRAC_2_PI.sqrt()),
                (LinkKind::Sign, NoiseLaw::Gaussian { sd }) => {
                    return Ok(FRAC_2_PI.sqrt() / (1.0 + sd * sd).sqrt())
                }
                (LinkKind::Cubic, _) => return Ok(3.0),
                _ => {}
            }
        }
    }

    let mut rng = rng_from_seed(seed);
    let support: Vec<(usize, f64)> = theta_star
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, v)| (j, *v))
        .collect();
    let b_theta = match design {
        DesignSpec::Elliptical(spec) => (spec.sigma_factor.transpose() * theta_star).norm(),
        DesignSpec::Iid(_) => 0.0,
    };
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..ETA_MC_DRAWS {
        let u = match design {
            DesignSpec::Elliptical(spec) => {
                let d = spec.dim();
                let mu = spec.radial.draw(d, spec.normalize_radial, &mut rng);
                let g1 = normal(&mut rng);
                let rest = if d > 1 {
                    ChiSquared::new((d - 1) as f64)
                        .expect("d > 1")
                        .sample(&mut rng)
                } else {
                    0.0
                };
                mu * b_theta * g1 / (g1 * g1 + rest).sqrt()
            }
            DesignSpec::Iid(spec) => support
                .iter()
                .map(|&(_, v)| v * spec.law.draw(&mut rng))
                .sum(),
        };
        let xi = link.noise.draw(&mut rng);
        let term = link.apply(u, xi) * u;
        sum += term;
        sum_sq += term * term;
    }
    let n = ETA_MC_DRAWS as f64;
    let mean = sum / n;
    let se = ((sum_sq / n - mean * mean).max(0.0) / n).sqrt();
    let eta = mean / quad;
    if mean.abs() <= 3.0 * se || eta.abs() < 1e-12 {
        return Err(Error::Degenerate(format!(
            "scaling constant is indistinguishable from zero (η ≈ {eta:.3e}); \
             the link looks symmetric in its index"
        )));
    }
    Ok(eta)
}

/// Draws `n` samples `yᵢ = f(<xᵢ, θ*>, ξᵢ)`.
///
/// For elliptical designs θ* is first rescaled so that `‖Σ^{1/2}θ*‖₂ = 1`.
/// The returned truth carries the rescaled θ* and its scaling constant; the
/// `eta` of the input truth is ignored.
pub fn synthesize_dataset(
    design: &DesignSpec,
    truth: &GroundTruth,
    n: usize,
    seed: u64,
) -> Result<(SampleSet, GroundTruth)> {
    let d = design.dim();
    if truth.theta_star.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "θ* has length {} but the design has dimension {d}",
            truth.theta_star.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    truth.regularizer().check_len(d)?;
    let mut theta = truth.theta_star.clone();
    if let DesignSpec::Elliptical(spec) = design {
        let scale = (spec.sigma_factor.transpose() * &theta).norm();
        if !(scale > 0.0) {
            return Err(Error::Degenerate("θ* lies in the null space of Σ".into()));
        }
        theta /= scale;
    }
    let eta = scaling_constant(design, &truth.link, &theta, derive_seed(seed, &[0xE7A]))?;

    let mut rng = rng_from_seed(seed);
    let x = design.sample(n, &mut rng);
    let index = &x * &theta;
    let y = DVector::from_iterator(
        n,
        index.iter().map(|&u| {
            let xi = truth.link.noise.draw(&mut rng);
            truth.link.apply(u, xi)
        }),
    );
    let samples = SampleSet::new(x, y)?;
    let filled = GroundTruth {
        theta_star: theta,
        eta,
        ..truth.clone()
    };
    Ok((samples, filled))
}

/// Writes `x1,...,xd,y` rows with round-trip decimal floats.
pub fn write_dataset_csv(samples: &SampleSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let d = samples.dim();
    let header: Vec<String> = (1..=d)
        .map(|j| format!("x{j}"))
        .chain(["y".to_string()])
        .collect();
    let io = |e| Error::io(path, e);
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for (row, y) in samples.design().row_iter().zip(samples.response().iter()) {
        let fields: Vec<String> = row
            .iter()
            .chain(std::iter::once(y))
            .map(|v| v.to_string())
            .collect();
        writeln!(out, "{}", fields.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_dataset_csv(path: &Path) -> Result<SampleSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let header = reader.headers()?.clone();
    let width = header.len();
    let expected = (1..width).map(|j| format!("x{j}")).chain(["y".to_string()]);
    if width < 2
        || !header
            .iter()
            .eq(expected.collect::<Vec<_>>().iter().map(String::as_str))
    {
        return Err(Error::Config(format!(
            "{}: header must be x1,...,xd,y",
            path.display()
        )));
    }
    let d = width - 1;
    let mut values = Vec::new();
    let mut response = Vec::new();
    for record in reader.records() {
        let record = record?;
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Config(format!(
                    "{}: cannot parse `{field}` as a number",
                    path.display()
                ))
            })?;
            if j < d {
                values.push(v);
            } else {
                response.push(v);
            }
        }
    }
    let n = response.len();
    SampleSet::new(
        DMatrix::from_row_slice(n, d, &values),
        DVector::from_vec(response),
    )
}

/// Exact `E|g|` for a standard normal `g`.
pub fn half_normal_mean() -> f64 {
    (2.0 / PI).sqrt()
}
