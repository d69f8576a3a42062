//! Seeded experiment runner: instance generation, noise, per-trial solves and
//! aggregate statistics.
//!
//! Every trial derives its own seed as `base + index`, so results do not
//! depend on scheduling and are merged in trial order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dodd::{
    general_dodd, procrustes_square_dodd, sinkhorn_square_dodd, DoddFactors, DoddMethod,
    ProcrustesOptions, SinkhornOptions, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::error::{Error, Result};
use crate::linalg::{random_orthonormal, DEFAULT_RANK_TOL};
use crate::odeco_tt2::{decompose_odeco_tt2, OdecoTt2Options};
use crate::symm_tt2::{decompose_symm_tt2, SymmTt2Options, DEFAULT_PSD_ATTEMPTS};
use crate::symm_ttl::{decompose_symm_ttl, satisfies_drc, SymmTtlOptions};
use crate::tensor::{relative_error, DenseTensor};
use crate::train::{assemble_train, Carriage, OdecoCarriage, SymmetricCarriage, TrainDecomposition};

/// Threshold on the relative error for a trial to count as a success.
pub const SUCCESS_THRESHOLD: f64 = 1e-10;
/// Floor applied to zero errors before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-300;
/// Entries of exact square DODD instances below this are resampled.
const ZERO_ENTRY_TOL: f64 = 1e-12;
/// Standard deviation of non-exact DODD instances.
const NON_EXACT_SD: f64 = 5.0;

pub const COEFFICIENT_NOTE: &str = "coefficients uniform on [-2,-0.5]U[0.5,2]; \
non-orthogonal symm-tt2 instances use positive-entry unit vectors and coefficients uniform on [0.5,2]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SymmTt2,
    SymmTtl,
    DoddSquare,
    DoddGeneral,
    OdecoTt2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    #[serde(default = "default_psd_attempts")]
    pub psd_attempts: usize,
    /// Whitening for symm-tt2; defaults to `!orthogonal`.
    #[serde(default)]
    pub whiten: Option<bool>,
    #[serde(default)]
    pub method: Option<DoddMethod>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Tandem Procrustes rounds per refresh; 1 for square, 2 for general DODD when unset.
    #[serde(default)]
    pub learn_rate: Option<usize>,
}

fn default_rank_tol() -> f64 {
    DEFAULT_RANK_TOL
}
fn default_psd_attempts() -> usize {
    DEFAULT_PSD_ATTEMPTS
}
fn default_tol() -> f64 {
    DEFAULT_TOL
}
fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}
fn default_true() -> bool {
    true
}
fn default_one() -> u32 {
    1
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rank_tol: DEFAULT_RANK_TOL,
            psd_attempts: DEFAULT_PSD_ATTEMPTS,
            whiten: None,
            method: None,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            learn_rate: None,
        }
    }
}

/// One batch of trials.
///
/// Sizes by kind:
/// - `symm-tt2`: `n`, `ranks = [rA, rB]`, optional `contractedEdges`
/// - `symm-ttl`: `n`, `ranks` of length `L ≥ 3` satisfying the DRC
/// - `dodd-square`: `n`
/// - `dodd-general`: `m`, `n`, optional `d` (default `max(m, n)`)
/// - `odeco-tt2`: `n` (all four outer modes), `ranks = [m, n]`, optional
///   `bond` (default `max(m, n)`) and `d`
///
/// For the DODD kinds `orthogonal` selects exact instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ranks: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bond: Option<usize>,
    #[serde(default = "default_one")]
    pub contracted_edges: u32,
    #[serde(default = "default_true")]
    pub orthogonal: bool,
    #[serde(default)]
    pub noise_sigma: f64,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Wall-clock timing breaks byte-identical reruns, so it is opt-in.
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    fn rank_pair(&self) -> Result<(usize, usize)> {
        match self.ranks[..] {
            [a, b] if a >= 1 && b >= 1 => Ok((a, b)),
            _ => Err(invalid(format!("{:?} needs two positive ranks, got {:?}", self.kind, self.ranks))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(invalid(format!("noiseSigma must be finite and >= 0, got {}", self.noise_sigma)));
        }
        if self.n == 0 {
            return Err(invalid("n must be positive".into()));
        }
        let too_big = |r: &usize| *r > self.n;
        match self.kind {
            ExperimentKind::SymmTt2 => {
                self.rank_pair()?;
                if self.ranks.iter().any(too_big) {
                    return Err(invalid(format!("ranks {:?} exceed n = {}", self.ranks, self.n)));
                }
                if self.contracted_edges == 0 {
                    return Err(invalid("contractedEdges must be at least 1".into()));
                }
            }
            ExperimentKind::SymmTtl => {
                if self.ranks.len() < 3 || self.ranks.contains(&0) || self.ranks.iter().any(too_big) {
                    return Err(invalid(format!(
                        "symm-ttl needs at least 3 ranks in 1..={}, got {:?}",
                        self.n, self.ranks
                    )));
                }
                if !satisfies_drc(&self.ranks) {
                    return Err(invalid(format!("ranks {:?} violate the decreasing ranks condition", self.ranks)));
                }
                if !self.orthogonal {
                    return Err(invalid("symm-ttl instances are orthogonal".into()));
                }
            }
            ExperimentKind::DoddSquare => {}
            ExperimentKind::DoddGeneral => {
                let m = self.m.ok_or_else(|| invalid("dodd-general needs m".into()))?;
                if m == 0 {
                    return Err(invalid("m must be positive".into()));
                }
                if self.d.is_some_and(|d| d < m.max(self.n)) {
                    return Err(Error::InvalidInflation { d: self.d.unwrap_or(0), m, n: self.n });
                }
            }
            ExperimentKind::OdecoTt2 => {
                let (a, b) = self.rank_pair()?;
                if a > self.n || b > self.n || self.bond.is_some_and(|k| k < a.max(b)) {
                    return Err(invalid(format!(
                        "odeco ranks {:?} must fit n = {} and bond {:?}",
                        self.ranks, self.n, self.bond
                    )));
                }
                if !self.orthogonal {
                    return Err(invalid("odeco-tt2 instances are orthogonal".into()));
                }
            }
        }
        Ok(())
    }

    pub fn trial_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }
}

fn invalid(msg: String) -> Error {
    Error::InvalidConfig(msg)
}

/// Ground-truth factors of a generated DODD instance, `Q` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DoddTruth {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub enum Instance {
    Tensor { tensor: DenseTensor, truth: TrainDecomposition },
    /// `truth` is `None` for non-exact instances.
    Matrix { matrix: DMatrix<f64>, truth: Option<DoddTruth> },
}

fn signed_coefficient<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let m: f64 = rng.random_range(0.5..=2.0);
    if rng.random::<bool>() {
        m
    } else {
        -m
    }
}

fn signed_coefficients<R: Rng + ?Sized>(r: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(r, |_, _| signed_coefficient(rng))
}

/// Unit vectors with entries drawn uniformly from `[0, 1)`.
fn positive_vectors<R: Rng + ?Sized>(n: usize, r: usize, rng: &mut R) -> DMatrix<f64> {
    let mut x = DMatrix::from_fn(n, r, |_, _| rng.random::<f64>());
    for mut c in x.column_iter_mut() {
        let norm = c.norm();
        c /= norm;
    }
    x
}

fn symmetric_carriage<R: Rng + ?Sized>(n: usize, r: usize, orthogonal: bool, rng: &mut R) -> Result<SymmetricCarriage> {
    if orthogonal {
        let x = random_orthonormal(n, r, rng);
        SymmetricCarriage::new(signed_coefficients(r, rng), x)
    } else {
        let x = positive_vectors(n, r, rng);
        SymmetricCarriage::new(DVector::from_fn(r, |_, _| rng.random_range(0.5..=2.0)), x)
    }
}

fn dodd_truth(lambda: &DVector<f64>, q: &DMatrix<f64>, mu: &DVector<f64>) -> DoddTruth {
    DoddTruth {
        lambda: lambda.iter().copied().collect(),
        mu: mu.iter().copied().collect(),
        q: q.row_iter().map(|r| r.iter().copied().collect()).collect(),
    }
}

fn non_exact<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> DMatrix<f64> {
    let normal = Normal::new(0.0, NON_EXACT_SD).expect("valid deviation");
    DMatrix::from_fn(m, n, |_, _| normal.sample(rng))
}

/// The noiseless instance and its generating factors for trial `index`.
pub fn make_instance(config: &ExperimentConfig, index: usize) -> Result<Instance> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.trial_seed(index));
    let n = config.n;
    match config.kind {
        ExperimentKind::SymmTt2 | ExperimentKind::SymmTtl => {
            let carriages = config
                .ranks
                .iter()
                .map(|&r| symmetric_carriage(n, r, config.orthogonal, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let p = if config.kind == ExperimentKind::SymmTt2 { config.contracted_edges } else { 1 };
            let truth = TrainDecomposition::new(carriages.into_iter().map(Carriage::Symmetric).collect(), p)?;
            Ok(Instance::Tensor { tensor: assemble_train(&truth)?, truth })
        }
        ExperimentKind::OdecoTt2 => {
            let (a, b) = config.rank_pair()?;
            let bond = config.bond.unwrap_or(a.max(b));
            let mut carriage = |r: usize| {
                let lambda = signed_coefficients(r, &mut rng);
                let va = random_orthonormal(n, r, &mut rng);
                let vb = random_orthonormal(n, r, &mut rng);
                let vc = random_orthonormal(bond, r, &mut rng);
                OdecoCarriage::new(lambda, va, vb, vc).map(Carriage::Odeco)
            };
            let truth = TrainDecomposition::new(vec![carriage(a)?, carriage(b)?], 1)?;
            Ok(Instance::Tensor { tensor: assemble_train(&truth)?, truth })
        }
        ExperimentKind::DoddSquare => {
            if !config.orthogonal {
                return Ok(Instance::Matrix { matrix: non_exact(n, n, &mut rng), truth: None });
            }
            loop {
                let q = random_orthonormal(n, n, &mut rng);
                let lambda = signed_coefficients(n, &mut rng);
                let mu = signed_coefficients(n, &mut rng);
                let x = DMatrix::from_fn(n, n, |i, j| lambda[i] * q[(i, j)] * mu[j]);
                if x.iter().all(|v| v.abs() >= ZERO_ENTRY_TOL) {
                    return Ok(Instance::Matrix { matrix: x, truth: Some(dodd_truth(&lambda, &q, &mu)) });
                }
            }
        }
        ExperimentKind::DoddGeneral => {
            let m = config.m.unwrap_or(n);
            if !config.orthogonal {
                return Ok(Instance::Matrix { matrix: non_exact(m, n, &mut rng), truth: None });
            }
            let d = config.d.unwrap_or(m.max(n));
            let q = random_orthonormal(d, d, &mut rng);
            let lambda = signed_coefficients(m, &mut rng);
            let mu = signed_coefficients(n, &mut rng);
            let x = DMatrix::from_fn(m, n, |i, j| lambda[i] * q[(i, j)] * mu[j]);
            let pad = |v: &DVector<f64>| DVector::from_fn(d, |i, _| if i < v.len() { v[i] } else { 0.0 });
            Ok(Instance::Matrix { matrix: x, truth: Some(dodd_truth(&pad(&lambda), &q, &pad(&mu))) })
        }
    }
}

/// `T + σ (‖T‖/‖N‖) N` with `N` standard normal, drawn from stream 1 of `seed`
/// so it never overlaps the instance draws of the same seed.
pub fn add_noise(t: &DenseTensor, sigma: f64, seed: u64) -> Result<DenseTensor> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("noise level must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(t.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let data: Vec<f64> = (0..t.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let noise = DenseTensor::new(t.shape().to_vec(), data)?;
    let nn = noise.norm();
    if nn == 0.0 {
        return Ok(t.clone());
    }
    t.add_scaled(&noise, sigma * t.norm() / nn)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    /// Reconstruction error for tensor kinds, `‖QQᵀ − I‖_F/√d` for DODD kinds;
    /// `None` when the solver produced nothing.
    pub rel_err: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub psd_attempts: Option<usize>,
    pub runtime_sec: f64,
    /// Error code of a failed trial.
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn is_success(&self) -> bool {
        self.error.is_none() && self.rel_err.is_some_and(|e| e < SUCCESS_THRESHOLD)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Aggregates {
    /// `10^(mean log₁₀ relErr)` over trials that produced an error value.
    pub geo_mean_rel_err: Option<f64>,
    pub arith_mean_rel_err: Option<f64>,
    pub success_count: usize,
    pub converged_count: usize,
    pub failure_count: usize,
    /// Failed trials per error code.
    pub failures: BTreeMap<String, usize>,
    pub mean_iterations: f64,
    pub mean_runtime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialStats {
    pub per_trial: Vec<TrialRecord>,
    pub aggregates: Aggregates,
}

pub fn geo_mean(errors: &[f64]) -> Option<f64> {
    if errors.is_empty() {
        return None;
    }
    let s: f64 = errors.iter().map(|e| e.max(LOG_FLOOR).log10()).sum();
    Some(10f64.powf(s / errors.len() as f64))
}

pub fn aggregate(per_trial: &[TrialRecord]) -> Aggregates {
    let errors: Vec<f64> = per_trial.iter().filter(|t| t.error.is_none()).filter_map(|t| t.rel_err).collect();
    let mut failures = BTreeMap::new();
    for t in per_trial {
        if let Some(code) = &t.error {
            *failures.entry(code.clone()).or_insert(0) += 1;
        }
    }
    let count = per_trial.len().max(1) as f64;
    Aggregates {
        geo_mean_rel_err: geo_mean(&errors),
        arith_mean_rel_err: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64),
        success_count: per_trial.iter().filter(|t| t.is_success()).count(),
        converged_count: per_trial.iter().filter(|t| t.converged).count(),
        failure_count: failures.values().sum(),
        failures,
        mean_iterations: per_trial.iter().map(|t| t.iterations as f64).sum::<f64>() / count,
        mean_runtime: per_trial.iter().map(|t| t.runtime_sec).sum::<f64>() / count,
    }
}

struct Outcome {
    rel_err: Option<f64>,
    iterations: usize,
    converged: bool,
    psd_attempts: Option<usize>,
}

fn dodd_outcome(result: Result<DoddFactors>) -> Result<Outcome> {
    let f = match result {
        Ok(f) => f,
        Err(Error::NotConverged(f)) => *f,
        Err(e) => return Err(e),
    };
    Ok(Outcome {
        rel_err: Some(f.orthogonality_error()),
        iterations: f.iterations,
        converged: f.converged,
        psd_attempts: None,
    })
}

fn procrustes_options(config: &ExperimentConfig, seed: u64, default_rate: usize) -> ProcrustesOptions {
    ProcrustesOptions {
        tol: config.solver.tol,
        max_iter: config.solver.max_iter,
        learn_rate: config.solver.learn_rate.unwrap_or(default_rate),
        seed,
        ..ProcrustesOptions::default()
    }
}

fn solve(config: &ExperimentConfig, input: &Instance, seed: u64) -> Result<Outcome> {
    let s = &config.solver;
    match input {
        Instance::Tensor { tensor, .. } => {
            let out = match config.kind {
                ExperimentKind::SymmTt2 => decompose_symm_tt2(
                    tensor,
                    &SymmTt2Options {
                        seed,
                        rank_tol: s.rank_tol,
                        whiten: s.whiten.unwrap_or(!config.orthogonal),
                        psd_attempts: s.psd_attempts,
                        contracted_edges: config.contracted_edges,
                        ..SymmTt2Options::default()
                    },
                )?,
                ExperimentKind::SymmTtl => decompose_symm_ttl(
                    tensor,
                    &SymmTtlOptions { seed, rank_tol: s.rank_tol, ..SymmTtlOptions::default() },
                )?,
                _ => decompose_odeco_tt2(
                    tensor,
                    &OdecoTt2Options {
                        seed,
                        rank_tol: s.rank_tol,
                        d: config.d,
                        method: s.method,
                        sinkhorn: SinkhornOptions { tol: s.tol, max_iter: s.max_iter },
                        procrustes: procrustes_options(config, seed, 2),
                    },
                )?,
            };
            let rel_err = relative_error(&assemble_train(&out.train)?, tensor)?;
            let (iterations, converged) =
                out.meta.dodd.as_ref().map_or((0, true), |d| (d.iterations, d.converged));
            Ok(Outcome { rel_err: Some(rel_err), iterations, converged, psd_attempts: out.meta.psd_attempts })
        }
        Instance::Matrix { matrix, .. } => match config.kind {
            ExperimentKind::DoddSquare => match s.method.unwrap_or(DoddMethod::Sinkhorn) {
                DoddMethod::Sinkhorn => {
                    dodd_outcome(sinkhorn_square_dodd(matrix, &SinkhornOptions { tol: s.tol, max_iter: s.max_iter }))
                }
                DoddMethod::Procrustes => dodd_outcome(procrustes_square_dodd(matrix, &procrustes_options(config, seed, 1))),
                DoddMethod::General => {
                    dodd_outcome(general_dodd(matrix, config.d.unwrap_or(config.n), &procrustes_options(config, seed, 2)))
                }
            },
            _ => {
                let d = config.d.unwrap_or(matrix.nrows().max(matrix.ncols()));
                dodd_outcome(general_dodd(matrix, d, &procrustes_options(config, seed, 2)))
            }
        },
    }
}

fn noisy(instance: Instance, sigma: f64, seed: u64) -> Result<Instance> {
    Ok(match instance {
        Instance::Tensor { tensor, truth } => Instance::Tensor { tensor: add_noise(&tensor, sigma, seed)?, truth },
        Instance::Matrix { matrix, truth } => {
            let t = add_noise(&DenseTensor::from_matrix(&matrix), sigma, seed)?;
            Instance::Matrix { matrix: t.to_matrix()?, truth }
        }
    })
}

/// Runs trial `index` of `config`; solver errors are recorded, not returned.
pub fn run_trial(config: &ExperimentConfig, index: usize) -> Result<TrialRecord> {
    let seed = config.trial_seed(index);
    let instance = noisy(make_instance(config, index)?, config.noise_sigma, seed)?;
    let start = Instant::now();
    let outcome = solve(config, &instance, seed);
    let runtime_sec = if config.timing { start.elapsed().as_secs_f64() } else { 0.0 };
    let mut record = TrialRecord {
        trial: index,
        seed,
        rel_err: None,
        iterations: 0,
        converged: false,
        psd_attempts: None,
        runtime_sec,
        error: None,
    };
    match outcome {
        Ok(o) => {
            record.rel_err = o.rel_err;
            record.iterations = o.iterations;
            record.converged = o.converged;
            record.psd_attempts = o.psd_attempts;
        }
        Err(e) => {
            if let Error::PsdSearchFailed { attempts } = e {
                record.psd_attempts = Some(attempts);
            }
            record.error = Some(e.code().to_string());
        }
    }
    Ok(record)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<TrialStats> {
    config.validate()?;
    let per_trial = (0..config.trials)
        .into_par_iter()
        .map(|i| run_trial(config, i))
        .collect::<Result<Vec<_>>>()?;
    let aggregates = aggregate(&per_trial);
    Ok(TrialStats { per_trial, aggregates })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn trials_csv(stats: &TrialStats) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["trial", "seed", "relErr", "iterations", "converged", "psdAttempts", "runtimeSec"])
        .map_err(csv_err)?;
    for t in &stats.per_trial {
        w.write_record([
            t.trial.to_string(),
            t.seed.to_string(),
            opt(t.rel_err),
            t.iterations.to_string(),
            t.converged.to_string(),
            opt(t.psd_attempts),
            t.runtime_sec.to_string(),
        ])
        .map_err(csv_err)?;
    }
    into_string(w)
}

/// Counts of trials per iteration number, for histogram plots.
pub fn iteration_histogram_csv(stats: &TrialStats) -> Result<String> {
    let mut counts = BTreeMap::new();
    for t in stats.per_trial.iter().filter(|t| t.error.is_none()) {
        *counts.entry(t.iterations).or_insert(0usize) += 1;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iterations", "count"]).map_err(csv_err)?;
    for (k, v) in counts {
        w.write_record([k.to_string(), v.to_string()]).map_err(csv_err)?;
    }
    into_string(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e)))
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Summary<'a> {
    config: &'a ExperimentConfig,
    trials: usize,
    #[serde(flatten)]
    aggregates: &'a Aggregates,
    success_threshold: f64,
    coefficient_distribution: &'static str,
}

pub fn summary_json(config: &ExperimentConfig, stats: &TrialStats) -> Result<String> {
    let s = Summary {
        config,
        trials: stats.per_trial.len(),
        aggregates: &stats.aggregates,
        success_threshold: SUCCESS_THRESHOLD,
        coefficient_distribution: COEFFICIENT_NOTE,
    };
    Ok(serde_json::to_string_pretty(&s)?)
}

/// Writes `<stem>.csv`, `<stem>_summary.json` and `<stem>_iterations.csv` into `dir`.
pub fn write_outputs(config: &ExperimentConfig, stats: &TrialStats, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let files = [
        (format!("{stem}.csv"), trials_csv(stats)?),
        (format!("{stem}_summary.json"), summary_json(config, stats)?),
        (format!("{stem}_iterations.csv"), iteration_histogram_csv(stats)?),
    ];
    files
        .into_iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            fs::write(&path, body)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthogonality_error;

    fn config(kind: ExperimentKind, n: usize, ranks: &[usize]) -> ExperimentConfig {
        ExperimentConfig {
            kind,
            n,
            m: None,
            ranks: ranks.to_vec(),
            d: None,
            bond: None,
            contracted_edges: 1,
            orthogonal: true,
            noise_sigma: 0.0,
            trials: 3,
            seed: 11,
            timing: false,
            solver: SolverConfig::default(),
        }
    }

    #[test]
    fn orthogonal_symm_tt2_sets_are_orthonormal() {
        let c = config(ExperimentKind::SymmTt2, 5, &[2, 3]);
        let Instance::Tensor { truth, .. } = make_instance(&c, 0).unwrap() else { panic!() };
        for carriage in &truth.carriages {
            let Carriage::Symmetric(s) = carriage else { panic!() };
            let g = s.vectors.transpose() * &s.vectors;
            assert!((g - DMatrix::identity(s.rank(), s.rank())).amax() < 1e-12);
        }
    }

    #[test]
    fn square_instances_have_no_small_entries() {
        let c = config(ExperimentKind::DoddSquare, 3, &[]);
        for i in 0..20 {
            let Instance::Matrix { matrix, .. } = make_instance(&c, i).unwrap() else { panic!() };
            assert!(matrix.iter().all(|v| v.abs() >= ZERO_ENTRY_TOL));
        }
    }

    #[test]
    fn ttl_instance_is_its_truth() {
        let c = config(ExperimentKind::SymmTtl, 4, &[2, 2, 2]);
        let Instance::Tensor { tensor, truth } = make_instance(&c, 0).unwrap() else { panic!() };
        assert_eq!(assemble_train(&truth).unwrap(), tensor);
    }

    #[test]
    fn general_truth_reproduces_crop() {
        let mut c = config(ExperimentKind::DoddGeneral, 5, &[]);
        c.m = Some(6);
        c.d = Some(8);
        let Instance::Matrix { matrix, truth: Some(t) } = make_instance(&c, 0).unwrap() else { panic!() };
        let q = DMatrix::from_fn(8, 8, |i, j| t.q[i][j]);
        assert!(orthogonality_error(&q) < 1e-14);
        for i in 0..6 {
            for j in 0..5 {
                assert_eq!(matrix[(i, j)], t.lambda[i] * q[(i, j)] * t.mu[j]);
            }
        }
    }

    #[test]
    fn drc_violation_is_invalid_config() {
        let c = config(ExperimentKind::SymmTtl, 4, &[2, 4, 3]);
        assert!(matches!(make_instance(&c, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn noise_has_requested_level() {
        let t = DenseTensor::new(vec![3, 4], (0..12).map(|i| i as f64 - 4.5).collect()).unwrap();
        assert_eq!(add_noise(&t, 0.0, 3).unwrap(), t);
        let e = relative_error(&add_noise(&t, 1e-2, 3).unwrap(), &t).unwrap();
        assert!((e - 1e-2).abs() < 1e-14);
    }

    #[test]
    fn geo_mean_floors_zero() {
        assert_eq!(geo_mean(&[]), None);
        let g = geo_mean(&[0.0, 1.0]).unwrap();
        assert!((g.log10() + 150.0).abs() < 1e-9);
        assert!((geo_mean(&[1e-4, 1e-2]).unwrap() - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn batch_is_deterministic() {
        let mut c = config(ExperimentKind::SymmTt2, 5, &[2, 3]);
        c.noise_sigma = 1e-6;
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!(trials_csv(&a).unwrap(), trials_csv(&b).unwrap());
        assert_eq!(a.per_trial.iter().map(|t| t.trial).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn exact_batches_succeed() {
        for c in [
            config(ExperimentKind::SymmTt2, 5, &[2, 3]),
            config(ExperimentKind::SymmTtl, 4, &[2, 2, 2]),
            config(ExperimentKind::DoddSquare, 4, &[]),
            config(ExperimentKind::OdecoTt2, 3, &[3, 3]),
        ] {
            let s = run_experiment(&c).unwrap();
            assert_eq!(s.aggregates.success_count, 3, "{:?}: {:?}", c.kind, s.per_trial);
        }
    }

    #[test]
    fn failures_are_counted_not_raised() {
        let mut c = config(ExperimentKind::SymmTt2, 5, &[5, 5]);
        c.orthogonal = false;
        c.solver.psd_attempts = 1;
        c.trials = 4;
        let s = run_experiment(&c).unwrap();
        let failed = s.aggregates.failures.get("PsdSearchFailed").copied().unwrap_or(0);
        assert_eq!(failed, s.aggregates.failure_count);
        assert_eq!(s.per_trial.len(), 4);
    }

    #[test]
    fn config_json_defaults() {
        let c = ExperimentConfig::from_json(r#"{"kind":"dodd-general","n":5,"m":6,"d":7,"trials":2}"#).unwrap();
        assert!(c.orthogonal);
        assert_eq!(c.solver.max_iter, 1000);
        assert!(ExperimentConfig::from_json(r#"{"kind":"dodd-general","n":5,"m":6,"d":4,"trials":2}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"kind":"symm-tt2","n":5,"ranks":[2,3],"trials":0}"#).is_err());
    }
}
