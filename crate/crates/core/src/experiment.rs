//! Seeded recovery experiments over grids of `(N, d, s)` and their CSV reports.
//!
//! Every `(cell, trial)` pair is an independent task whose data comes from a
//! seed derived from `(master_seed, N, d, s, trial)`. Tasks may run on any
//! number of workers; rows are sorted before they are written, so the output
//! does not depend on scheduling.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{error_metrics, theoretical_rate, ProblemDims, RateMode};
use crate::error::{Error, Result};
use crate::model::{flatten, EstimatorConfig, GroundTruth, Regularizer, SolverOptions};
use crate::sampling::{
    derive_seed, make_low_rank_signal, make_sparse_signal, synthesize_dataset, DesignSpec,
    EllipticalSpec, EntryLaw, LinkFunction, LinkKind, NoiseLaw, RadialLaw, SignalMode,
};
use crate::solver::{
    fit, fit_single_index, fit_thresholded_lasso, kkt_from_grad, lambda_single_index,
    lambda_sparse, FitReport,
};
use crate::SampleSet;

pub const ROW_HEADER: &str =
    "mode,N,d,s,trial,estimator,l2,psi_err,cosine,iters,converged,kkt,wall_ms,pred_rate";

pub const SUMMARY_HEADER: &str = "mode,N,d,s,estimator,rows,excluded,\
l2_median,l2_q25,l2_q75,psi_err_median,psi_err_q25,psi_err_q75,\
cosine_median,cosine_q25,cosine_q75,iters_median,kkt_median,pred_rate";

pub const CONSTANTS_HEADER: &str = "mode,estimator,c_hat,residual_ss,cells";

pub const THRESHOLDED: &str = "thresholded";
pub const VANILLA: &str = "vanilla_lasso";
pub const ORACLE_OLS: &str = "oracle_ols";

/// Environment variable consulted for the worker count when none is given.
pub const WORKERS_ENV: &str = "TRUNCREG_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentMode {
    SparseGeneral,
    SingleIndexSparse,
    SingleIndexLowRank,
}

impl ExperimentMode {
    pub fn tag(&self) -> &'static str {
        match self {
            ExperimentMode::SparseGeneral => "sparse_general",
            ExperimentMode::SingleIndexSparse => "single_index_sparse",
            ExperimentMode::SingleIndexLowRank => "single_index_low_rank",
        }
    }

    pub fn rate_mode(&self) -> RateMode {
        match self {
            ExperimentMode::SingleIndexLowRank => RateMode::LowRankL2,
            _ => RateMode::SparseL2,
        }
    }
}

impl std::str::FromStr for ExperimentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse_general" => Ok(ExperimentMode::SparseGeneral),
            "single_index_sparse" => Ok(ExperimentMode::SingleIndexSparse),
            "single_index_low_rank" => Ok(ExperimentMode::SingleIndexLowRank),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: Vec<usize>,
    /// Vector dimensions for the sparse modes.
    #[serde(default)]
    pub d: Vec<usize>,
    /// `[rows, cols]` pairs for the low-rank mode.
    #[serde(default)]
    pub shape: Vec<[usize; 2]>,
    /// Sparsity levels, or ranks in the low-rank mode.
    pub s: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaConfig {
    #[default]
    Identity,
    /// `Σᵢⱼ = rho^|i−j|`.
    Toeplitz { rho: f64 },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignConfig {
    Iid {
        law: EntryLaw,
    },
    Elliptical {
        radial: RadialLaw,
        #[serde(default)]
        sigma: SigmaConfig,
        #[serde(default = "default_true")]
        normalize_radial: bool,
    },
}

impl DesignConfig {
    pub fn build(&self, d: usize) -> Result<DesignSpec> {
        match *self {
            DesignConfig::Iid { law } => DesignSpec::iid(law, d),
            DesignConfig::Elliptical {
                radial,
                sigma,
                normalize_radial,
            } => {
                let factor = match sigma {
                    SigmaConfig::Identity => DMatrix::identity(d, d),
                    SigmaConfig::Toeplitz { rho } => {
                        if !(rho.abs() < 1.0) {
                            return Err(Error::Config(format!(
                                "toeplitz correlation must be in (-1, 1), got {rho}"
                            )));
                        }
                        let sigma = DMatrix::from_fn(d, d, |i, j| rho.powi(i.abs_diff(j) as i32));
                        sigma
                            .cholesky()
                            .ok_or_else(|| Error::Degenerate("toeplitz covariance".into()))?
                            .l()
                    }
                };
                Ok(DesignSpec::Elliptical(EllipticalSpec::new(
                    factor,
                    radial,
                    normalize_radial,
                )?))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub lambda_scale: f64,
    /// Moment order used by the elliptical threshold `N^{2/(q+4)}`.
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_kkt_tol")]
    pub kkt_tol: f64,
}

fn default_q() -> f64 {
    8.0
}
fn default_max_iters() -> usize {
    SolverOptions::default().max_iters
}
fn default_rel_tol() -> f64 {
    SolverOptions::default().rel_tol
}
fn default_kkt_tol() -> f64 {
    SolverOptions::default().kkt_tol
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            kkt_tol: self.kkt_tol,
            ..SolverOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Baselines {
    /// Same λ and penalty without any truncation.
    pub vanilla_lasso: bool,
    /// Least squares restricted to the true support (sparse modes only).
    pub oracle_ols_on_support: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Write measured wall times; otherwise `wall_ms` is 0 so that reruns are
    /// byte-identical.
    pub record_timing: bool,
}

fn default_signal() -> SignalMode {
    SignalMode::UnitEntries
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub mode: ExperimentMode,
    pub trials: usize,
    pub master_seed: u64,
    pub grid: GridSpec,
    pub design: DesignConfig,
    pub link: LinkFunction,
    #[serde(default = "default_signal")]
    pub signal: SignalMode,
    pub solver: SolverConfig,
    #[serde(default)]
    pub baselines: Baselines,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub n: usize,
    pub dims: ProblemDims,
    pub s: usize,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.grid.n.is_empty() || self.grid.s.is_empty() {
            return bad("grid needs at least one N and one s".into());
        }
        if self.grid.n.iter().chain(&self.grid.s).any(|v| *v == 0) {
            return bad("grid values must be positive".into());
        }
        match self.mode {
            ExperimentMode::SingleIndexLowRank => {
                if self.grid.shape.is_empty() || !self.grid.d.is_empty() {
                    return bad("low-rank mode takes `shape` and no `d`".into());
                }
                if self.baselines.oracle_ols_on_support {
                    return bad("oracle_ols_on_support applies to the sparse modes only".into());
                }
            }
            _ => {
                if self.grid.d.is_empty() || !self.grid.shape.is_empty() {
                    return bad("sparse modes take `d` and no `shape`".into());
                }
            }
        }
        for cell in self.cells() {
            let cap = match cell.dims {
                ProblemDims::Vector(d) => d,
                ProblemDims::Matrix(m, n) => m.min(n),
            };
            if cell.dims.total() == 0 || cell.s > cap {
                return bad(format!(
                    "s = {} does not fit dimension {}",
                    cell.s, cell.dims
                ));
            }
        }
        if !(self.solver.lambda_scale > 0.0) {
            return bad("lambda_scale must be positive".into());
        }
        if self.mode != ExperimentMode::SparseGeneral && !(self.solver.q > 4.0) {
            return bad("single-index modes need q > 4".into());
        }
        self.solver.options().validate()?;
        self.link.validate()?;
        Ok(())
    }

    /// Cells in grid order: `N`, then dimension, then `s`.
    pub fn cells(&self) -> Vec<Cell> {
        let dims: Vec<ProblemDims> = match self.mode {
            ExperimentMode::SingleIndexLowRank => self
                .grid
                .shape
                .iter()
                .map(|[m, n]| ProblemDims::Matrix(*m, *n))
                .collect(),
            _ => self
                .grid
                .d
                .iter()
                .map(|d| ProblemDims::Vector(*d))
                .collect(),
        };
        let mut cells = Vec::new();
        for &n in &self.grid.n {
            for &dims in &dims {
                for &s in &self.grid.s {
                    cells.push(Cell { n, dims, s });
                }
            }
        }
        cells
    }

    pub fn estimators(&self) -> Vec<&'static str> {
        let mut tags = vec![THRESHOLDED];
        if self.baselines.vanilla_lasso {
            tags.push(VANILLA);
        }
        if self.baselines.oracle_ols_on_support {
            tags.push(ORACLE_OLS);
        }
        tags.sort_unstable();
        tags
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub mode: ExperimentMode,
    pub n: usize,
    pub dims: ProblemDims,
    pub s: usize,
    pub trial: usize,
    pub estimator: String,
    pub l2_error: f64,
    pub psi_error: f64,
    pub cosine: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub wall_ms: f64,
    pub predicted_rate: f64,
}

fn trial_seed(master: u64, cell: &Cell, trial: usize) -> u64 {
    let (a, b) = match cell.dims {
        ProblemDims::Vector(d) => (d as u64, 0),
        ProblemDims::Matrix(m, n) => (m as u64, n as u64),
    };
    derive_seed(master, &[cell.n as u64, a, b, cell.s as u64, trial as u64])
}

/// The data and ground truth one trial of a cell works on.
pub fn trial_dataset(
    spec: &ExperimentSpec,
    cell: &Cell,
    trial: usize,
) -> Result<(SampleSet, GroundTruth)> {
    let seed = trial_seed(spec.master_seed, cell, trial);
    let d = cell.dims.total();
    let (theta, shape) = match cell.dims {
        ProblemDims::Vector(d) => (
            make_sparse_signal(d, cell.s, spec.signal, derive_seed(seed, &[1]))?,
            None,
        ),
        ProblemDims::Matrix(m, n) => (
            flatten(&make_low_rank_signal(
                m,
                n,
                cell.s,
                derive_seed(seed, &[1]),
            )?),
            Some((m, n)),
        ),
    };
    let truth = GroundTruth {
        theta_star: theta,
        shape,
        eta: f64::NAN,
        sparsity: cell.s,
        link: spec.link.clone(),
    };
    let design = spec.design.build(d)?;
    synthesize_dataset(&design, &truth, cell.n, derive_seed(seed, &[2]))
}

fn regularizer_for(dims: ProblemDims) -> Regularizer {
    match dims {
        ProblemDims::Vector(_) => Regularizer::L1,
        ProblemDims::Matrix(rows, cols) => Regularizer::Nuclear { rows, cols },
    }
}

fn run_estimator(
    spec: &ExperimentSpec,
    cell: &Cell,
    tag: &str,
    raw: &SampleSet,
    truth: &GroundTruth,
) -> Result<FitReport> {
    let opts = spec.solver.options();
    let scale = spec.solver.lambda_scale;
    let reg = regularizer_for(cell.dims);
    let d = cell.dims.total();
    let lambda = match spec.mode {
        ExperimentMode::SparseGeneral => lambda_sparse(cell.n, d, scale),
        _ => lambda_single_index(cell.n, reg, d, cell.s, scale),
    };
    match tag {
        THRESHOLDED => match spec.mode {
            ExperimentMode::SparseGeneral => fit_thresholded_lasso(raw, scale, &opts),
            _ => fit_single_index(raw, spec.solver.q, reg, scale, cell.s, &opts),
        },
        VANILLA => {
            let config = EstimatorConfig {
                solver: opts,
                ..EstimatorConfig::new(lambda, reg)
            };
            fit(raw, &config)
        }
        ORACLE_OLS => oracle_ols(raw, truth),
        other => Err(Error::Config(format!("unknown estimator `{other}`"))),
    }
}

/// Least squares on the true support, scored like any other fit.
fn oracle_ols(raw: &SampleSet, truth: &GroundTruth) -> Result<FitReport> {
    let start = std::time::Instant::now();
    let support: Vec<usize> = truth
        .theta_star
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, _)| j)
        .collect();
    let xs = raw.design().select_columns(&support);
    let gram = xs.tr_mul(&xs);
    let coef = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&xs.tr_mul(raw.response())))
        .ok_or_else(|| Error::Degenerate("support Gram matrix is singular".into()))?;
    let mut theta = DVector::zeros(raw.dim());
    for (k, &j) in support.iter().enumerate() {
        theta[j] = coef[k];
    }
    let n = raw.n_samples() as f64;
    let residual = xs * &coef - raw.response();
    let grad = (raw.design().tr_mul(&residual) * (2.0 / n)).select_rows(&support);
    let kkt = kkt_from_grad(Regularizer::L1, &coef, &grad, 0.0);
    Ok(FitReport {
        result: crate::RecoveryResult {
            objective_trace: vec![residual.norm_squared() / n],
            theta_hat: theta,
            iterations: 0,
            converged: true,
            kkt_residual: kkt,
        },
        lambda_used: 0.0,
        tau_used: None,
        truncation_kind: "none",
        wall_time: start.elapsed(),
    })
}

fn run_task(spec: &ExperimentSpec, cell: &Cell, trial: usize) -> Result<Vec<MetricRow>> {
    let (raw, truth) = trial_dataset(spec, cell, trial)?;
    let predicted_rate = theoretical_rate(spec.mode.rate_mode(), cell.s, cell.dims, cell.n)?;
    let mut rows = Vec::new();
    for tag in spec.estimators() {
        let row = |theta: &DVector<f64>,
                   iterations,
                   converged,
                   kkt_residual,
                   wall_ms|
         -> Result<MetricRow> {
            let metrics = error_metrics(theta, &truth)?;
            Ok(MetricRow {
                mode: spec.mode,
                n: cell.n,
                dims: cell.dims,
                s: cell.s,
                trial,
                estimator: tag.to_string(),
                l2_error: metrics.l2,
                psi_error: metrics.psi,
                cosine: metrics.cosine,
                iterations,
                converged,
                kkt_residual,
                wall_ms,
                predicted_rate,
            })
        };
        match run_estimator(spec, cell, tag, &raw, &truth) {
            Ok(report) => {
                let wall = if spec.output.record_timing {
                    report.wall_time.as_secs_f64() * 1e3
                } else {
                    0.0
                };
                let r = &report.result;
                rows.push(row(
                    &r.theta_hat,
                    r.iterations,
                    r.converged,
                    r.kkt_residual,
                    wall,
                )?);
            }
            Err(Error::Degenerate(_) | Error::NonFiniteObjective { .. }) => {
                rows.push(row(&DVector::zeros(raw.dim()), 0, false, f64::NAN, 0.0)?);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}

fn resolve_workers(workers: Option<usize>) -> Option<usize> {
    workers
        .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()))
        .filter(|w| *w > 0)
}

/// Runs every `(cell, trial, estimator)` and returns rows in grid order, then
/// trial, then estimator tag.
pub fn run_experiment(spec: &ExperimentSpec, workers: Option<usize>) -> Result<Vec<MetricRow>> {
    spec.validate()?;
    let cells = spec.cells();
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    let work = || -> Result<Vec<Vec<MetricRow>>> {
        tasks
            .par_iter()
            .map(|&(c, t)| run_task(spec, &cells[c], t))
            .collect()
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = resolve_workers(workers) {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let chunks = pool.install(work)?;
    let mut keyed: Vec<(usize, MetricRow)> = tasks
        .iter()
        .zip(chunks)
        .flat_map(|(&(c, _), rows)| rows.into_iter().map(move |r| (c, r)))
        .collect();
    keyed.sort_by(|(ca, a), (cb, b)| {
        ca.cmp(cb)
            .then(a.trial.cmp(&b.trial))
            .then(a.estimator.cmp(&b.estimator))
    });
    Ok(keyed.into_iter().map(|(_, r)| r).collect())
}

/// `%.9g`-style formatting: nine significant digits, trailing zeros dropped,
/// exponent form outside `[1e-5, 1e9)`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim(&format!("{v:.decimals$}"))
    } else {
        format!(
            "{}e{}{:02}",
            trim(mantissa),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    }
}

fn row_fields(r: &MetricRow) -> [String; 14] {
    [
        r.mode.tag().to_string(),
        r.n.to_string(),
        r.dims.to_string(),
        r.s.to_string(),
        r.trial.to_string(),
        r.estimator.clone(),
        format_float(r.l2_error),
        format_float(r.psi_error),
        format_float(r.cosine),
        r.iterations.to_string(),
        r.converged.to_string(),
        format_float(r.kkt_residual),
        format_float(r.wall_ms),
        format_float(r.predicted_rate),
    ]
}

pub fn write_rows<W: Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(ROW_HEADER.split(','))?;
    for r in rows {
        w.write_record(row_fields(r))?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}

pub fn emit_csv(rows: &[MetricRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_rows(rows, BufWriter::new(file))
}

pub fn read_rows(path: &Path) -> Result<Vec<MetricRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != ROW_HEADER {
        return Err(Error::Config(format!(
            "{}: expected header `{ROW_HEADER}`",
            path.display()
        )));
    }
    let parse_err = |what: &str, v: &str| Error::Config(format!("cannot parse {what} `{v}`"));
    let mut rows = Vec::new();
    for record in reader.records() {
        let rec = record?;
        let f =
            |i: usize| -> Result<f64> { rec[i].parse().map_err(|_| parse_err("number", &rec[i])) };
        let u = |i: usize| -> Result<usize> {
            rec[i].parse().map_err(|_| parse_err("integer", &rec[i]))
        };
        rows.push(MetricRow {
            mode: rec[0].parse()?,
            n: u(1)?,
            dims: rec[2].parse()?,
            s: u(3)?,
            trial: u(4)?,
            estimator: rec[5].to_string(),
            l2_error: f(6)?,
            psi_error: f(7)?,
            cosine: f(8)?,
            iterations: u(9)?,
            converged: rec[10]
                .parse()
                .map_err(|_| parse_err("boolean", &rec[10]))?,
            kkt_residual: f(11)?,
            wall_ms: f(12)?,
            predicted_rate: f(13)?,
        });
    }
    Ok(rows)
}

/// Lower order statistic at level `p`: index `⌊p·(n−1)⌋` of the sorted values.
/// For `p = 0.5` and even counts this is the lower median.
pub fn order_statistic(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = (p * (sorted.len() - 1) as f64).floor() as usize;
    sorted[idx]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl Quartiles {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut v: Vec<f64> = values.into_iter().collect();
        v.sort_by(f64::total_cmp);
        Quartiles {
            median: order_statistic(&v, 0.5),
            q25: order_statistic(&v, 0.25),
            q75: order_statistic(&v, 0.75),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub mode: ExperimentMode,
    pub n: usize,
    pub dims: ProblemDims,
    pub s: usize,
    pub estimator: String,
    pub rows: usize,
    /// Non-converged rows left out of the statistics.
    pub excluded: usize,
    pub l2: Quartiles,
    pub psi: Quartiles,
    pub cosine: Quartiles,
    pub iterations_median: f64,
    pub kkt_median: f64,
    pub predicted_rate: f64,
}

/// `ĉ` minimizing `Σ (median_l2 − ĉ·rate)²` over the cells of one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct RateConstant {
    pub mode: ExperimentMode,
    pub estimator: String,
    pub c_hat: f64,
    pub residual_ss: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub cells: Vec<CellSummary>,
    pub constants: Vec<RateConstant>,
}

impl Summary {
    pub fn cell(&self, n: usize, estimator: &str) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.n == n && c.estimator == estimator)
    }
}

pub fn summarize(rows: &[MetricRow]) -> Result<Summary> {
    if rows.is_empty() {
        return Err(Error::Empty("metric rows"));
    }
    type Key = (ExperimentMode, usize, ProblemDims, usize, String);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: std::collections::HashMap<Key, Vec<&MetricRow>> = Default::default();
    for r in rows {
        let key = (r.mode, r.n, r.dims, r.s, r.estimator.clone());
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    let cells: Vec<CellSummary> = order
        .iter()
        .map(|key| {
            let members = &groups[key];
            let kept: Vec<&&MetricRow> = members.iter().filter(|r| r.converged).collect();
            let quart = |f: fn(&MetricRow) -> f64| Quartiles::of(kept.iter().map(|r| f(r)));
            CellSummary {
                mode: key.0,
                n: key.1,
                dims: key.2,
                s: key.3,
                estimator: key.4.clone(),
                rows: members.len(),
                excluded: members.len() - kept.len(),
                l2: quart(|r| r.l2_error),
                psi: quart(|r| r.psi_error),
                cosine: quart(|r| r.cosine),
                iterations_median: quart(|r| r.iterations as f64).median,
                kkt_median: quart(|r| r.kkt_residual).median,
                predicted_rate: members[0].predicted_rate,
            }
        })
        .collect();

    let mut constants: Vec<RateConstant> = Vec::new();
    for c in &cells {
        if constants
            .iter()
            .any(|k| k.mode == c.mode && k.estimator == c.estimator)
        {
            continue;
        }
        let points: Vec<(f64, f64)> = cells
            .iter()
            .filter(|o| o.mode == c.mode && o.estimator == c.estimator)
            .filter(|o| o.l2.median.is_finite() && o.predicted_rate.is_finite())
            .map(|o| (o.l2.median, o.predicted_rate))
            .collect();
        let denom: f64 = points.iter().map(|(_, r)| r * r).sum();
        let c_hat = if denom > 0.0 {
            points.iter().map(|(m, r)| m * r).sum::<f64>() / denom
        } else {
            f64::NAN
        };
        let residual_ss = points.iter().map(|(m, r)| (m - c_hat * r).powi(2)).sum();
        constants.push(RateConstant {
            mode: c.mode,
            estimator: c.estimator.clone(),
            c_hat,
            residual_ss,
            cells: points.len(),
        });
    }
    Ok(Summary { cells, constants })
}

pub fn write_summary<W: Write>(summary: &Summary, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(SUMMARY_HEADER.split(','))?;
    for c in &summary.cells {
        let q = |q: &Quartiles| {
            [
                format_float(q.median),
                format_float(q.q25),
                format_float(q.q75),
            ]
        };
        let mut rec = vec![
            c.mode.tag().to_string(),
            c.n.to_string(),
            c.dims.to_string(),
            c.s.to_string(),
            c.estimator.clone(),
            c.rows.to_string(),
            c.excluded.to_string(),
        ];
        rec.extend(q(&c.l2));
        rec.extend(q(&c.psi));
        rec.extend(q(&c.cosine));
        rec.push(format_float(c.iterations_median));
        rec.push(format_float(c.kkt_median));
        rec.push(format_float(c.predicted_rate));
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}

pub fn write_constants<W: Write>(summary: &Summary, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(CONSTANTS_HEADER.split(','))?;
    for k in &summary.constants {
        w.write_record([
            k.mode.tag().to_string(),
            k.estimator.clone(),
            format_float(k.c_hat),
            format_float(k.residual_ss),
            k.cells.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}

/// Writes `rows.csv`, `summary.csv` and `constants.csv` into `dir`.
pub fn write_report(rows: &[MetricRow], dir: &Path) -> Result<Summary> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    emit_csv(rows, &dir.join("rows.csv"))?;
    let summary = summarize(rows)?;
    let open = |name: &str| -> Result<BufWriter<File>> {
        let path = dir.join(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| Error::io(path, e))
    };
    write_summary(&summary, open("summary.csv")?)?;
    write_constants(&summary, open("constants.csv")?)?;
    Ok(summary)
}

/// Picks the candidate `lambda_scale` with the smallest median ℓ2 error of the
/// thresholded estimator at sample size `n`. Calibration data come from a seed
/// stream separate from the one `run_experiment` uses.
pub fn calibrate_lambda_scale(
    spec: &ExperimentSpec,
    n: usize,
    candidates: &[f64],
    trials: usize,
    workers: Option<usize>,
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Empty("lambda_scale candidates"));
    }
    let mut best = (f64::INFINITY, candidates[0]);
    for &scale in candidates {
        let mut probe = spec.clone();
        probe.grid.n = vec![n];
        probe.trials = trials;
        probe.master_seed = derive_seed(spec.master_seed, &[0xCA1B]);
        probe.baselines = Baselines::default();
        probe.solver.lambda_scale = scale;
        let rows = run_experiment(&probe, workers)?;
        let median = Quartiles::of(rows.iter().map(|r| r.l2_error)).median;
        if median < best.0 {
            best = (median, scale);
        }
    }
    Ok(best.1)
}

/// Built-in desk-scale specifications, one per mode.
pub fn demo_spec(mode: ExperimentMode) -> ExperimentSpec {
    let solver = |lambda_scale: f64| SolverConfig {
        lambda_scale,
        q: default_q(),
        max_iters: default_max_iters(),
        rel_tol: default_rel_tol(),
        kkt_tol: default_kkt_tol(),
    };
    match mode {
        ExperimentMode::SparseGeneral => ExperimentSpec {
            mode,
            trials: 20,
            master_seed: 2022,
            grid: GridSpec {
                n: vec![1000, 4000],
                d: vec![200],
                shape: vec![],
                s: vec![5],
            },
            design: DesignConfig::Iid {
                law: EntryLaw::StudentT { df: 25.0 },
            },
            link: LinkFunction::linear(NoiseLaw::Student {
                df: 6.0,
                scale: 0.5,
            }),
            signal: SignalMode::UnitEntries,
            solver: solver(SPARSE_LAMBDA_SCALE),
            baselines: Baselines {
                vanilla_lasso: true,
                oracle_ols_on_support: true,
            },
            output: OutputConfig::default(),
        },
        ExperimentMode::SingleIndexSparse => ExperimentSpec {
            mode,
            trials: 20,
            master_seed: 2023,
            grid: GridSpec {
                n: vec![4000],
                d: vec![100],
                shape: vec![],
                s: vec![5],
            },
            design: DesignConfig::Elliptical {
                radial: RadialLaw::GaussianChi,
                sigma: SigmaConfig::Identity,
                normalize_radial: true,
            },
            link: LinkFunction {
                kind: LinkKind::Sign,
                noise: NoiseLaw::None,
            },
            signal: SignalMode::UnitEntries,
            solver: solver(SINGLE_INDEX_LAMBDA_SCALE),
            baselines: Baselines::default(),
            output: OutputConfig::default(),
        },
        ExperimentMode::SingleIndexLowRank => ExperimentSpec {
            mode,
            trials: 10,
            master_seed: 2024,
            grid: GridSpec {
                n: vec![1500, 6000],
                d: vec![],
                shape: vec![[20, 20]],
                s: vec![2],
            },
            design: DesignConfig::Elliptical {
                radial: RadialLaw::GaussianChi,
                sigma: SigmaConfig::Identity,
                normalize_radial: true,
            },
            link: LinkFunction::linear(NoiseLaw::Gaussian { sd: 0.5 }),
            signal: SignalMode::UnitEntries,
            solver: solver(LOW_RANK_LAMBDA_SCALE),
            baselines: Baselines {
                vanilla_lasso: true,
                oracle_ols_on_support: false,
            },
            output: OutputConfig::default(),
        },
    }
}

/// Frozen `lambda_scale` of the sparse demo, picked by
/// [`calibrate_lambda_scale`] at `N = 2000` over [`SPARSE_LAMBDA_GRID`].
pub const SPARSE_LAMBDA_SCALE: f64 = 0.75;
pub const SPARSE_LAMBDA_GRID: [f64; 7] = [0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0];
pub const SINGLE_INDEX_LAMBDA_SCALE: f64 = 1.0;
pub const LOW_RANK_LAMBDA_SCALE: f64 = 1.0;
