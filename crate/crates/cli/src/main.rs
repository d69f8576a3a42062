use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use odeco_train::dodd::{
    general_dodd, procrustes_square_dodd, sinkhorn_square_dodd, zero_inflate, DoddFactors,
    DoddMethod, ProcrustesOptions, SinkhornOptions, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use odeco_train::harness::{
    add_noise, make_instance, run_experiment, write_outputs, ExperimentConfig, ExperimentKind,
    Instance, SolverConfig,
};
use odeco_train::io::{read_matrix, read_tensor, write_tensor, Decomposition, DoddJson, Meta};
use odeco_train::linalg::DEFAULT_RANK_TOL;
use odeco_train::odeco_tt2::{decompose_odeco_tt2, OdecoTt2Options};
use odeco_train::symm_tt2::{decompose_symm_tt2, SymmTt2Options, DEFAULT_PSD_ATTEMPTS};
use odeco_train::symm_ttl::{decompose_symm_ttl, SymmTtlOptions};
use odeco_train::tensor::{relative_error, DenseTensor};
use odeco_train::{assemble_train, Error};

const SCHEMAS: &str = "\
JSON formats:
  tensor         {\"shape\": [n1, n2, ...], \"data\": [...]}  (data row-major; a matrix is 2-way)
  decomposition  {\"carriages\": [...], \"meta\": {\"seed\", \"rankTol\", \"whitened\"?, \"psdAttempts\"?,
                  \"contractedEdges\"?, \"positions\"?: [{\"position\", \"direction\": \"LR\"|\"RL\", \"rank\"}],
                  \"dodd\"?: {\"method\", \"d\", \"iterations\", \"converged\", \"reconstructionError\"}}}
                 symmetric carriage: {\"coefficients\": [..], \"vectors\": [[column], ...]}
                 odeco carriage:     {\"coefficients\", \"vectorsA\", \"vectorsB\", \"vectorsC\"}  (columns; C is the bond)
  dodd factors   {\"lambda\", \"mu\", \"Q\": [[row], ...], \"d\", \"iterations\", \"converged\",
                  \"reconstructionError\", \"orthogonalityError\"}
  bench config   {\"kind\": \"symm-tt2\"|\"symm-ttl\"|\"dodd-square\"|\"dodd-general\"|\"odeco-tt2\",
                  \"n\", \"m\"?, \"ranks\"?, \"d\"?, \"bond\"?, \"contractedEdges\"?, \"orthogonal\"?,
                  \"noiseSigma\"?, \"trials\", \"seed\"?, \"timing\"?,
                  \"solver\"?: {\"rankTol\", \"psdAttempts\", \"whiten\", \"method\", \"tol\", \"maxIter\", \"learnRate\"}}

Exit status: 0 success, 1 solver failure (error JSON {\"code\", \"message\", ...} on stderr),
2 usage or I/O error.";

#[derive(Parser)]
#[command(name = "odeco-train", version, about = "Tensor train decompositions with odeco carriages", after_long_help = SCHEMAS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random instance and its ground truth.
    Generate(GenerateArgs),
    /// Decompose a tensor and report the reconstruction error.
    Decompose(DecomposeArgs),
    /// Diagonal-orthogonal-diagonal decomposition of a matrix.
    Dodd(DoddArgs),
    /// Run a batch experiment from a config file.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    SymmTt2,
    SymmTtl,
    DoddSquare,
    DoddGeneral,
    OdecoTt2,
}

impl From<GenKind> for ExperimentKind {
    fn from(k: GenKind) -> Self {
        match k {
            GenKind::SymmTt2 => ExperimentKind::SymmTt2,
            GenKind::SymmTtl => ExperimentKind::SymmTtl,
            GenKind::DoddSquare => ExperimentKind::DoddSquare,
            GenKind::DoddGeneral => ExperimentKind::DoddGeneral,
            GenKind::OdecoTt2 => ExperimentKind::OdecoTt2,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: GenKind,
    /// Mode dimension (columns for DODD kinds).
    #[arg(long)]
    n: usize,
    /// Rows of a general DODD instance.
    #[arg(long)]
    m: Option<usize>,
    /// Carriage ranks, comma separated.
    #[arg(long, value_delimiter = ',')]
    ranks: Vec<usize>,
    #[arg(long)]
    d: Option<usize>,
    /// Bond dimension of odeco instances.
    #[arg(long)]
    bond: Option<usize>,
    #[arg(long, default_value_t = 1)]
    contracted_edges: u32,
    /// Non-orthogonal vectors (symm-tt2) or a non-exact matrix (DODD kinds).
    #[arg(long)]
    non_orthogonal: bool,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Ground truth file; omitted for non-exact DODD instances.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecomposeKind {
    SymmTt2,
    SymmTtl,
    OdecoTt2,
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(long, value_enum)]
    kind: DecomposeKind,
    #[arg(long)]
    input: PathBuf,
    /// Decomposition JSON destination; printed to stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    rank_tol: f64,
    /// Whiten before decomposing (non-orthogonal symm-tt2).
    #[arg(long)]
    whiten: bool,
    #[arg(long, default_value_t = DEFAULT_PSD_ATTEMPTS)]
    psd_attempts: usize,
    #[arg(long, default_value_t = 1)]
    contracted_edges: u32,
    /// Inflation size for odeco-tt2.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    method: Option<DoddMethod>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long)]
    learn_rate: Option<usize>,
}

#[derive(Args)]
struct DoddArgs {
    #[arg(long, default_value = "sinkhorn")]
    method: DoddMethod,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Inflation size for the general method; defaults to max(m, n).
    #[arg(long)]
    d: Option<usize>,
    /// Tandem Procrustes rounds per refresh; 1 for procrustes, 2 for general by default.
    #[arg(long)]
    learn_rate: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// File name stem; defaults to the config file stem.
    #[arg(long)]
    stem: Option<String>,
    /// Record wall-clock runtimes (outputs are then no longer byte-identical).
    #[arg(long)]
    timing: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Decompose(a) => decompose(a),
        Command::Dodd(a) => dodd(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

fn error_json(e: &Error) -> Value {
    let mut v = json!({ "code": e.code(), "message": e.to_string() });
    let extra = match e {
        Error::ZeroEntry { row, col } => json!({ "row": row, "col": col }),
        Error::DegenerateInnerProduct { row, col, value } => json!({ "row": row, "col": col, "value": value }),
        Error::PsdSearchFailed { attempts } | Error::DegenerateContraction { attempts } => {
            json!({ "attempts": attempts })
        }
        Error::NotConverged(f) => json!({ "iterations": f.iterations, "residual": f.residual }),
        Error::InvalidInflation { d, m, n } => json!({ "d": d, "m": m, "n": n }),
        Error::NoSymmetrizer { ratio } => json!({ "ratio": ratio }),
        _ => json!({}),
    };
    if let (Some(obj), Value::Object(more)) = (v.as_object_mut(), extra) {
        obj.extend(more);
    }
    v
}

fn write_or_print(path: Option<&Path>, body: &str) -> Result<(), Error> {
    match path {
        Some(p) => fs::write(p, body)?,
        None => println!("{body}"),
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<(), Error> {
    let config = ExperimentConfig {
        kind: a.kind.into(),
        n: a.n,
        m: a.m,
        ranks: a.ranks,
        d: a.d,
        bond: a.bond,
        contracted_edges: a.contracted_edges,
        orthogonal: !a.non_orthogonal,
        noise_sigma: a.noise_sigma,
        trials: 1,
        seed: a.seed,
        timing: false,
        solver: SolverConfig::default(),
    };
    let (tensor, truth) = match make_instance(&config, 0)? {
        Instance::Tensor { tensor, truth } => {
            let doc = Decomposition {
                meta: Meta {
                    seed: a.seed,
                    rank_tol: DEFAULT_RANK_TOL,
                    contracted_edges: Some(truth.contracted_edges),
                    ..Meta::default()
                },
                train: truth,
            };
            (tensor, Some(doc.to_json()?))
        }
        Instance::Matrix { matrix, truth } => {
            let body = truth.map(|t| serde_json::to_string_pretty(&t)).transpose()?;
            (DenseTensor::from_matrix(&matrix), body)
        }
    };
    let noisy = add_noise(&tensor, a.noise_sigma, a.seed)?;
    write_tensor(&a.output, &noisy)?;
    if let (Some(path), Some(body)) = (&a.truth, truth) {
        fs::write(path, body)?;
    }
    Ok(())
}

fn decompose(a: DecomposeArgs) -> Result<(), Error> {
    let t = read_tensor(&a.input)?;
    let out = match a.kind {
        DecomposeKind::SymmTt2 => decompose_symm_tt2(
            &t,
            &SymmTt2Options {
                seed: a.seed,
                rank_tol: a.rank_tol,
                whiten: a.whiten,
                psd_attempts: a.psd_attempts,
                contracted_edges: a.contracted_edges,
                ..SymmTt2Options::default()
            },
        )?,
        DecomposeKind::SymmTtl => decompose_symm_ttl(
            &t,
            &SymmTtlOptions { seed: a.seed, rank_tol: a.rank_tol, ..SymmTtlOptions::default() },
        )?,
        DecomposeKind::OdecoTt2 => decompose_odeco_tt2(
            &t,
            &OdecoTt2Options {
                seed: a.seed,
                rank_tol: a.rank_tol,
                d: a.d,
                method: a.method,
                sinkhorn: SinkhornOptions { tol: a.tol, max_iter: a.max_iter },
                procrustes: ProcrustesOptions {
                    tol: a.tol,
                    max_iter: a.max_iter,
                    learn_rate: a.learn_rate.unwrap_or(2),
                    seed: a.seed,
                    ..ProcrustesOptions::default()
                },
            },
        )?,
    };
    let err = relative_error(&assemble_train(&out.train)?, &t)?;
    let body = out.to_json()?;
    match &a.output {
        Some(p) => {
            fs::write(p, &body)?;
            println!("{}", json!({ "relativeError": err }));
        }
        None => {
            let mut doc: Value = serde_json::from_str(&body)?;
            doc["relativeError"] = json!(err);
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
    }
    Ok(())
}

fn dodd(a: DoddArgs) -> Result<(), Error> {
    let x = read_matrix(&a.input)?;
    let (m, n) = x.shape();
    let procrustes = |rate: usize| ProcrustesOptions {
        tol: a.tol,
        max_iter: a.max_iter,
        learn_rate: a.learn_rate.unwrap_or(rate),
        seed: a.seed,
        ..ProcrustesOptions::default()
    };
    let d = match a.method {
        DoddMethod::General => a.d.unwrap_or(m.max(n)),
        _ => m,
    };
    let result = match a.method {
        DoddMethod::Sinkhorn => sinkhorn_square_dodd(&x, &SinkhornOptions { tol: a.tol, max_iter: a.max_iter }),
        DoddMethod::Procrustes => procrustes_square_dodd(&x, &procrustes(1)),
        DoddMethod::General => general_dodd(&x, d, &procrustes(2)),
    };
    let (factors, failure): (DoddFactors, Option<Error>) = match result {
        Ok(f) => (f, None),
        Err(Error::NotConverged(f)) => {
            let f = *f;
            let e = Error::NotConverged(Box::new(f.clone()));
            (f, Some(e))
        }
        Err(e) => return Err(e),
    };
    let inflated = zero_inflate(&x, d)?;
    let body = serde_json::to_string_pretty(&DoddJson::new(&factors, &inflated))?;
    write_or_print(a.output.as_deref(), &body)?;
    failure.map_or(Ok(()), Err)
}

fn bench(a: BenchArgs) -> Result<(), Error> {
    let mut config = ExperimentConfig::from_json(&fs::read_to_string(&a.config)?)?;
    config.timing |= a.timing;
    let stats = run_experiment(&config)?;
    let stem = a
        .stem
        .or_else(|| a.config.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "bench".into());
    let files = write_outputs(&config, &stats, &a.out_dir, &stem)?;
    let g = &stats.aggregates;
    println!(
        "{}",
        json!({
            "trials": stats.per_trial.len(),
            "successCount": g.success_count,
            "geoMeanRelErr": g.geo_mean_rel_err,
            "failureCount": g.failure_count,
            "files": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        })
    );
    Ok(())
}
