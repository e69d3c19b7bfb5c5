//! Command implementations behind the `alspca` binary.

pub mod bench;
pub mod output;

use std::path::{Path, PathBuf};

use alspca::covariance::{
    center_columns, sample_covariance, top_eigenvectors, total_variance, CovarianceOperator,
};
use alspca::datasets::{self, PITPROPS_VARIABLES};
use alspca::io::{read_csv_matrix, read_whitespace_matrix};
use alspca::metrics::{adjusted_variance, MetricsBundle};
use alspca::{
    solve_sparse_pca, InnerConfig, InnerMethod, ProblemSpec, SolveResult, SolveStatus, SpcaError,
};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

pub use bench::{cmd_random_bench, BenchArgs};
use output::{config_map, num};
pub use output::{Format, Report, Table};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_NUMERICAL: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Solver(#[from] SpcaError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } | CliError::Solver(SpcaError::Io(_)) => EXIT_IO,
            CliError::Solver(
                SpcaError::Parse(_) | SpcaError::DataValidation(_) | SpcaError::Shape(_),
            ) => EXIT_USAGE,
            CliError::Solver(_) => EXIT_NUMERICAL,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// A finished command: its report and whether the computation converged.
#[derive(Debug, Clone)]
pub struct Run {
    pub report: Report,
    pub converged: bool,
}

#[derive(Debug, Parser)]
#[command(
    name = "alspca",
    version,
    about = "Sparse PCA with nearly uncorrelated components"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Standard PCA loadings, eigenvalues and CPAV.
    Pca(PcaArgs),
    /// Sparse PCA by the augmented Lagrangian method.
    Alspca(AlspcaArgs),
    /// Sparse PCA over a batch of random centered data matrices.
    RandomBench(BenchArgs),
    /// Quality metrics for an externally supplied loadings matrix.
    Metrics(MetricsArgs),
}

impl Command {
    pub fn output(&self) -> &OutputArgs {
        match self {
            Command::Pca(a) => &a.output,
            Command::Alspca(a) => &a.output,
            Command::RandomBench(a) => &a.output,
            Command::Metrics(a) => &a.output,
        }
    }

    pub fn run(&self) -> CliResult<Run> {
        match self {
            Command::Pca(a) => cmd_pca(a),
            Command::Alspca(a) => cmd_alspca(a),
            Command::RandomBench(a) => cmd_random_bench(a),
            Command::Metrics(a) => cmd_metrics(a),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Output file; standard output when omitted.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl Default for OutputArgs {
    fn default() -> Self {
        Self {
            format: Format::Csv,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PcaArgs {
    /// `synthetic`, `pitprops`, a `.csv` data file or a whitespace covariance file.
    #[arg(long)]
    pub input: String,
    #[arg(long)]
    pub r: usize,
    /// Use the data matrix implicitly (CSV data inputs only).
    #[arg(long)]
    pub implicit: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AlspcaArgs {
    #[arg(long)]
    pub input: String,
    #[arg(long)]
    pub r: usize,
    #[arg(long)]
    pub rho: f64,
    #[arg(long)]
    pub delta: f64,
    #[arg(long, default_value_t = alspca::model::DEFAULT_EPS_I)]
    pub eps_i: f64,
    #[arg(long, default_value_t = alspca::model::DEFAULT_EPS_E)]
    pub eps_e: f64,
    #[arg(long, default_value_t = alspca::model::DEFAULT_EPS_O)]
    pub eps_o: f64,
    /// Inner solver: 1 or 2.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub method: u8,
    #[arg(long, default_value_t = alspca::model::DEFAULT_OUTER_MAX_ITER)]
    pub outer_max_iter: usize,
    #[arg(long, default_value_t = alspca::model::DEFAULT_INNER_MAX_ITER)]
    pub inner_max_iter: usize,
    #[arg(long)]
    pub implicit: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MetricsArgs {
    /// CSV loadings file, p rows by r columns, optional header.
    #[arg(long)]
    pub loadings: PathBuf,
    #[arg(long)]
    pub input: String,
    #[arg(long)]
    pub implicit: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutputArgs,
}

/// A covariance source with variable labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub cov: CovarianceOperator,
    pub variables: Vec<String>,
}

/// Resolves builtin names first, then treats the input as a path. CSV files
/// hold observations; other files hold a whitespace-separated covariance.
pub fn resolve_input(input: &str, implicit: bool) -> CliResult<Dataset> {
    match input {
        "synthetic" => Ok(Dataset {
            name: input.into(),
            cov: datasets::synthetic_covariance(),
            variables: (1..=10).map(|i| format!("X{i}")).collect(),
        }),
        "pitprops" => Ok(Dataset {
            name: input.into(),
            cov: datasets::pitprops(),
            variables: PITPROPS_VARIABLES.iter().map(|s| s.to_string()).collect(),
        }),
        path => {
            let p = Path::new(path);
            if !p.is_file() {
                return Err(CliError::Usage(format!(
                    "unknown input `{path}`: expected `synthetic`, `pitprops` or an existing file"
                )));
            }
            let is_csv = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            if is_csv {
                let table = read_csv_matrix(p).map_err(|e| io_or(e, p))?;
                let x = center_columns(&table.data)?;
                let variables = table.header.unwrap_or_else(|| default_names(x.ncols()));
                let cov = if implicit {
                    CovarianceOperator::implicit(x)?
                } else {
                    sample_covariance(&x)?
                };
                Ok(Dataset {
                    name: path.into(),
                    cov,
                    variables,
                })
            } else {
                if implicit {
                    return Err(CliError::Usage(
                        "--implicit needs a CSV data file, not a covariance file".into(),
                    ));
                }
                let m = read_whitespace_matrix(p).map_err(|e| io_or(e, p))?;
                let cov = CovarianceOperator::explicit(m)?;
                let variables = default_names(cov.p());
                Ok(Dataset {
                    name: path.into(),
                    cov,
                    variables,
                })
            }
        }
    }
}

fn io_or(e: SpcaError, path: &Path) -> CliError {
    match e {
        SpcaError::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => CliError::Solver(other),
    }
}

fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("V{i}")).collect()
}

fn check_r(r: usize, p: usize) -> CliResult<()> {
    if r == 0 || r > p {
        return Err(CliError::Usage(format!("--r must be in 1..={p}, got {r}")));
    }
    Ok(())
}

/// Table with one row per variable and one column per component.
pub fn loadings_table(variables: &[String], v: &DMatrix<f64>) -> Table {
    let mut columns = vec!["variable".to_string()];
    columns.extend((1..=v.ncols()).map(|k| format!("PC{k}")));
    let rows = (0..v.nrows())
        .map(|i| {
            let mut row = vec![Value::String(variables[i].clone())];
            row.extend(v.row(i).iter().map(|x| num(*x)));
            row
        })
        .collect();
    Table { columns, rows }
}

fn put_metrics(rep: &mut Report, m: &MetricsBundle) {
    rep.set("sparsity", m.sparsity);
    rep.set("non_orthogonality_deg", num(m.non_orthogonality_deg));
    rep.set("max_correlation", num(m.max_correlation));
    rep.set("adj_var", num(m.adj_var));
    rep.set("cpav_percent", num(m.cpav_percent));
}

pub fn cmd_pca(args: &PcaArgs) -> CliResult<Run> {
    let ds = resolve_input(&args.input, args.implicit)?;
    check_r(args.r, ds.cov.p())?;
    let (v, vals) = top_eigenvectors(&ds.cov, args.r)?;
    let mut rep = Report::new("pca", config_map(args));
    rep.set(
        "eigenvalues",
        Value::Array(vals.iter().map(|x| num(*x)).collect()),
    );
    rep.set("total_variance", num(total_variance(&ds.cov)));
    rep.set("adj_var", num(adjusted_variance(&ds.cov, &v)?));
    rep.set("cpav_percent", num(alspca::metrics::cpav(&ds.cov, &v)?));
    rep.table = loadings_table(&ds.variables, &v);
    Ok(Run {
        report: rep,
        converged: true,
    })
}

pub fn inner_config(method: u8) -> InnerConfig {
    InnerConfig {
        method: if method == 1 {
            InnerMethod::MethodI
        } else {
            InnerMethod::MethodII
        },
        ..InnerConfig::default()
    }
}

/// Runs the solver and returns the report together with the raw result.
pub fn run_alspca(args: &AlspcaArgs) -> CliResult<(Report, SolveResult)> {
    let ds = resolve_input(&args.input, args.implicit)?;
    check_r(args.r, ds.cov.p())?;
    let spec = ProblemSpec::from_scalars(ds.cov.p(), args.r, args.rho, args.delta)
        .and_then(|s| s.with_tolerances(args.eps_i, args.eps_e, args.eps_o))
        .and_then(|s| s.with_max_iters(args.outer_max_iter, args.inner_max_iter))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let out = solve_sparse_pca(&ds.cov, &spec, &inner_config(args.method))?;

    let mut rep = Report::new("alspca", config_map(args));
    rep.set("status", out.status.as_str());
    rep.set("outer_iters", out.outer_iters);
    rep.set("inner_iters_total", out.inner_iters_total);
    put_metrics(&mut rep, &out.metrics);
    rep.set("ineq_violation", num(out.residuals.ineq_violation));
    rep.set("eq_violation", num(out.residuals.eq_violation));
    rep.set("objective", num(out.objective));
    rep.set("lagrangian", num(out.lagrangian));
    rep.set("inner_residual", num(out.inner_residual));
    rep.set("penalty", num(out.penalty.varrho));
    rep.set("robinson", out.robinson.as_str());
    rep.table = loadings_table(&ds.variables, &out.v);
    Ok((rep, out))
}

pub fn cmd_alspca(args: &AlspcaArgs) -> CliResult<Run> {
    let (report, out) = run_alspca(args)?;
    Ok(Run {
        report,
        converged: out.status == SolveStatus::Converged,
    })
}

pub fn cmd_metrics(args: &MetricsArgs) -> CliResult<Run> {
    let ds = resolve_input(&args.input, args.implicit)?;
    let table = read_csv_matrix(&args.loadings).map_err(|e| io_or(e, &args.loadings))?;
    let v = table.data;
    if v.nrows() != ds.cov.p() {
        return Err(CliError::Usage(format!(
            "loadings have {} rows but the covariance has p = {}",
            v.nrows(),
            ds.cov.p()
        )));
    }
    let m = MetricsBundle::compute(&ds.cov, &v)?;
    let mut rep = Report::new("metrics", config_map(args));
    rep.set("p", v.nrows());
    rep.set("r", v.ncols());
    put_metrics(&mut rep, &m);
    rep.table = Table {
        columns: vec!["metric".into(), "value".into()],
        rows: vec![
            vec![json!("sparsity"), json!(m.sparsity)],
            vec![json!("non_orthogonality_deg"), num(m.non_orthogonality_deg)],
            vec![json!("max_correlation"), num(m.max_correlation)],
            vec![json!("adj_var"), num(m.adj_var)],
            vec![json!("cpav_percent"), num(m.cpav_percent)],
        ],
    };
    Ok(Run {
        report: rep,
        converged: true,
    })
}

/// Writes the report to `--out` or standard output.
pub fn emit(report: &Report, output: &OutputArgs) -> CliResult<()> {
    match &output.out {
        Some(path) => {
            let mut f = std::fs::File::create(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            report
                .write(output.format, &mut f)
                .map_err(|source| CliError::Io {
                    path: path.clone(),
                    source,
                })
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            report
                .write(output.format, &mut lock)
                .map_err(|source| CliError::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

/// Parses, runs and writes; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let run = match cli.command.run() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    if let Err(e) = emit(&run.report, cli.command.output()) {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    if run.converged {
        0
    } else {
        if let Some(status) = run.report.summary.get("status") {
            eprintln!("warning: solver finished with status {status}");
        }
        EXIT_NOT_CONVERGED
    }
}
