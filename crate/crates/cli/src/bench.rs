//! Batch runs over random centered data matrices, with an optional search
//! for the penalty that reaches a target mean sparsity.

use alspca::datasets::{random_centered_matrix, RNG_ALGORITHM};
use alspca::metrics::MetricsBundle;
use alspca::{solve_sparse_pca, ProblemSpec, SolveStatus};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::output::{config_map, num, Format, Table};
use crate::{inner_config, CliError, CliResult, OutputArgs, Report, Run};

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub p: usize,
    #[arg(long, default_value_t = 3)]
    pub r: usize,
    /// Fixed penalty. Exactly one of `--rho` and `--target-sparsity` is required.
    #[arg(
        long,
        conflicts_with = "target_sparsity",
        required_unless_present = "target_sparsity"
    )]
    pub rho: Option<f64>,
    /// Search for the penalty whose mean sparsity is closest to this value.
    #[arg(long)]
    pub target_sparsity: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub delta: f64,
    /// Seed of the first instance; instance `k` uses `seed + k`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub eps_i: f64,
    #[arg(long, default_value_t = 0.1)]
    pub eps_e: f64,
    #[arg(long, default_value_t = 0.1)]
    pub eps_o: f64,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub method: u8,
    #[arg(long, default_value_t = alspca::model::DEFAULT_OUTER_MAX_ITER)]
    pub outer_max_iter: usize,
    #[arg(long, default_value_t = alspca::model::DEFAULT_INNER_MAX_ITER)]
    pub inner_max_iter: usize,
    #[arg(long, default_value_t = 8)]
    pub bisection_steps: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutputArgs,
}

impl Default for BenchArgs {
    fn default() -> Self {
        Self {
            count: 100,
            n: 20,
            p: 20,
            r: 3,
            rho: None,
            target_sparsity: None,
            delta: 0.5,
            seed: 0,
            eps_i: 0.1,
            eps_e: 0.1,
            eps_o: 0.1,
            method: 2,
            outer_max_iter: alspca::model::DEFAULT_OUTER_MAX_ITER,
            inner_max_iter: alspca::model::DEFAULT_INNER_MAX_ITER,
            bisection_steps: 8,
            output: OutputArgs {
                format: Format::Csv,
                out: None,
            },
        }
    }
}

/// Outcome of one random instance. `metrics` is `None` when the solver errored.
#[derive(Debug, Clone, Serialize)]
pub struct BenchInstance {
    pub seed: u64,
    pub status: String,
    pub converged: bool,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub inner_residual: f64,
    pub ineq_violation: f64,
    pub eq_violation: f64,
    pub metrics: Option<MetricsBundle>,
    pub error: Option<String>,
}

/// Means over the instances that returned a solution.
#[derive(Debug, Clone, Serialize)]
pub struct BenchSummary {
    pub rho: f64,
    pub count: usize,
    pub failures: usize,
    pub not_converged: usize,
    pub mean_sparsity: f64,
    pub mean_non_orthogonality_deg: f64,
    pub mean_max_correlation: f64,
    pub mean_cpav_percent: f64,
}

pub fn run_instances(args: &BenchArgs, rho: f64) -> CliResult<Vec<BenchInstance>> {
    if args.r == 0 || args.r > args.p {
        return Err(CliError::Usage(format!("--r must be in 1..={}", args.p)));
    }
    let spec = ProblemSpec::from_scalars(args.p, args.r, rho, args.delta)
        .and_then(|s| s.with_tolerances(args.eps_i, args.eps_e, args.eps_o))
        .and_then(|s| s.with_max_iters(args.outer_max_iter, args.inner_max_iter))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let cfg = inner_config(args.method);
    let seeds: Vec<u64> = (0..args.count as u64).map(|k| args.seed + k).collect();
    Ok(seeds
        .into_par_iter()
        .map(|seed| {
            let solved = random_centered_matrix(args.n, args.p, seed)
                .and_then(|c| solve_sparse_pca(&c, &spec, &cfg));
            match solved {
                Ok(out) => BenchInstance {
                    seed,
                    status: out.status.as_str().into(),
                    converged: out.status == SolveStatus::Converged,
                    outer_iters: out.outer_iters,
                    inner_iters: out.inner_iters_total,
                    inner_residual: out.inner_residual,
                    ineq_violation: out.residuals.ineq_violation,
                    eq_violation: out.residuals.eq_violation,
                    metrics: Some(out.metrics),
                    error: None,
                },
                Err(e) => BenchInstance {
                    seed,
                    status: "error".into(),
                    converged: false,
                    outer_iters: 0,
                    inner_iters: 0,
                    inner_residual: f64::NAN,
                    ineq_violation: f64::NAN,
                    eq_violation: f64::NAN,
                    metrics: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn summarize(instances: &[BenchInstance], rho: f64) -> BenchSummary {
    let ok: Vec<&MetricsBundle> = instances
        .iter()
        .filter_map(|i| i.metrics.as_ref())
        .collect();
    BenchSummary {
        rho,
        count: instances.len(),
        failures: instances.len() - ok.len(),
        not_converged: instances.iter().filter(|i| !i.converged).count(),
        mean_sparsity: mean(ok.iter().map(|m| m.sparsity as f64)),
        mean_non_orthogonality_deg: mean(ok.iter().map(|m| m.non_orthogonality_deg)),
        mean_max_correlation: mean(ok.iter().map(|m| m.max_correlation)),
        mean_cpav_percent: mean(ok.iter().map(|m| m.cpav_percent)),
    }
}

/// One evaluated penalty during the search.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub summary: BenchSummary,
    pub instances: Vec<BenchInstance>,
}

fn evaluate(args: &BenchArgs, rho: f64) -> CliResult<Evaluation> {
    let instances = run_instances(args, rho)?;
    Ok(Evaluation {
        summary: summarize(&instances, rho),
        instances,
    })
}

/// Brackets the target by doubling from `rho = 1`, bisects `steps` times and
/// returns every evaluation plus the index of the one closest to the target.
/// Mean sparsity is treated as nondecreasing in `rho`.
pub fn search_rho(
    args: &BenchArgs,
    target: f64,
    steps: usize,
) -> CliResult<(Vec<Evaluation>, usize)> {
    const MAX_DOUBLINGS: usize = 30;
    let mut evals: Vec<Evaluation> = Vec::new();
    let mut lo = 0.0;
    let mut hi = 1.0;
    for _ in 0..MAX_DOUBLINGS {
        let e = evaluate(args, hi)?;
        let reached = e.summary.mean_sparsity >= target;
        evals.push(e);
        if reached {
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        let e = evaluate(args, mid)?;
        if e.summary.mean_sparsity < target {
            lo = mid;
        } else {
            hi = mid;
        }
        evals.push(e);
    }
    let best = evals
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            let da = (a.summary.mean_sparsity - target).abs();
            let db = (b.summary.mean_sparsity - target).abs();
            da.total_cmp(&db)
        })
        .map(|(i, _)| i)
        .expect("at least one evaluation");
    Ok((evals, best))
}

/// Runs the batch at a fixed penalty or after a penalty search.
pub fn run_bench(args: &BenchArgs) -> CliResult<(Evaluation, Vec<BenchSummary>)> {
    match (args.rho, args.target_sparsity) {
        (Some(rho), None) => Ok((evaluate(args, rho)?, Vec::new())),
        (None, Some(target)) => {
            let (mut evals, best) = search_rho(args, target, args.bisection_steps)?;
            let path = evals.iter().map(|e| e.summary.clone()).collect();
            Ok((evals.swap_remove(best), path))
        }
        _ => Err(CliError::Usage(
            "exactly one of --rho and --target-sparsity is required".into(),
        )),
    }
}

fn metric_or_nan(m: Option<&MetricsBundle>, f: impl Fn(&MetricsBundle) -> f64) -> Value {
    num(m.map_or(f64::NAN, f))
}

pub fn cmd_random_bench(args: &BenchArgs) -> CliResult<Run> {
    let (eval, path) = run_bench(args)?;
    let s = &eval.summary;
    let mut rep = Report::new("random-bench", config_map(args));
    rep.set("rng", RNG_ALGORITHM);
    rep.set("rho", num(s.rho));
    rep.set("instances", s.count);
    rep.set("failures", s.failures);
    rep.set("not_converged", s.not_converged);
    rep.set("mean_sparsity", num(s.mean_sparsity));
    rep.set(
        "mean_non_orthogonality_deg",
        num(s.mean_non_orthogonality_deg),
    );
    rep.set("mean_max_correlation", num(s.mean_max_correlation));
    rep.set("mean_cpav_percent", num(s.mean_cpav_percent));
    if !path.is_empty() {
        let trail: Vec<Value> = path
            .iter()
            .map(|p| json!({"rho": num(p.rho), "mean_sparsity": num(p.mean_sparsity)}))
            .collect();
        rep.set("search", Value::Array(trail));
    }
    let columns = [
        "seed",
        "status",
        "sparsity",
        "non_orthogonality_deg",
        "max_correlation",
        "cpav_percent",
        "outer_iters",
        "inner_iters",
    ];
    let mut rows: Vec<Vec<Value>> = eval
        .instances
        .iter()
        .map(|i| {
            let m = i.metrics.as_ref();
            vec![
                json!(i.seed),
                json!(i.status),
                m.map_or(Value::Null, |m| json!(m.sparsity)),
                metric_or_nan(m, |m| m.non_orthogonality_deg),
                metric_or_nan(m, |m| m.max_correlation),
                metric_or_nan(m, |m| m.cpav_percent),
                json!(i.outer_iters),
                json!(i.inner_iters),
            ]
        })
        .collect();
    rows.push(vec![
        json!("mean"),
        Value::Null,
        num(s.mean_sparsity),
        num(s.mean_non_orthogonality_deg),
        num(s.mean_max_correlation),
        num(s.mean_cpav_percent),
        Value::Null,
        Value::Null,
    ]);
    rep.table = Table {
        columns: columns.iter().map(|c| c.to_string()).collect(),
        rows,
    };
    let converged = eval.instances.iter().all(|i| i.converged);
    Ok(Run {
        report: rep,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchArgs {
        BenchArgs {
            count: 4,
            n: 8,
            p: 6,
            r: 2,
            ..BenchArgs::default()
        }
    }

    #[test]
    fn fixed_rho_is_reproducible() {
        let args = small();
        let a = run_instances(&args, 0.2).unwrap();
        let b = run_instances(&args, 0.2).unwrap();
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.seed, y.seed);
            assert_eq!(x.metrics.map(|m| m.sparsity), y.metrics.map(|m| m.sparsity));
        }
    }

    #[test]
    fn summary_skips_failures() {
        let mut inst = run_instances(&small(), 0.2).unwrap();
        inst[0].metrics = None;
        let s = summarize(&inst, 0.2);
        assert_eq!(s.failures, 1);
        assert!(s.mean_sparsity.is_finite());
    }

    #[test]
    fn search_picks_closest_evaluation() {
        let args = small();
        let (evals, best) = search_rho(&args, 4.0, 4).unwrap();
        let d = |e: &Evaluation| (e.summary.mean_sparsity - 4.0).abs();
        assert!(evals.iter().all(|e| d(&evals[best]) <= d(e)));
    }

    #[test]
    fn zero_rank_is_rejected() {
        let args = BenchArgs { r: 0, ..small() };
        assert!(matches!(run_instances(&args, 0.1), Err(CliError::Usage(_))));
    }
}
