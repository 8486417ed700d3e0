//! Command-line front end. `run_cli` returns the process exit code:
//! 0 converged, 1 other failure, 2 inner stall, 3 outer limit, 4 config error.

use std::path::PathBuf;

use clap::Parser;

use crate::config::{RunSpec, ScheduleKind, SpecError};
use crate::driver::{baseline_sqp, run_dsqp, SolveError, SolveResult, SolveStatus};
use crate::problems::{load_problem, ProblemId};
use crate::trace::{write_summary, write_traces, MethodSummary, RunSummary};

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INNER_STALL: i32 = 2;
pub const EXIT_OUTER_LIMIT: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

pub const DEFAULT_OUT_DIR: &str = "dsqp-out";

#[derive(Debug, Parser)]
#[command(name = "dsqp", about = "Decentralized SQP with ADMM inner iterations")]
pub struct Args {
    /// P1, P2, net3 or custom.
    #[arg(long)]
    pub problem: Option<ProblemId>,
    /// TOML run specification; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// constant, geometric or residual.
    #[arg(long)]
    pub schedule: Option<ScheduleKind>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub eta0: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run exact SQP instead of d-SQP.
    #[arg(long, conflicts_with = "compare")]
    pub baseline: bool,
    /// Run both methods and report their distance.
    #[arg(long)]
    pub compare: bool,
}

/// Exit code for a finished solve.
pub fn exit_code(status: SolveStatus) -> i32 {
    match status {
        SolveStatus::Converged => EXIT_CONVERGED,
        SolveStatus::InnerStall => EXIT_INNER_STALL,
        SolveStatus::OuterLimit => EXIT_OUTER_LIMIT,
        SolveStatus::EvaluationFailure | SolveStatus::LinearizationFailure => EXIT_FAILURE,
    }
}

fn merged_spec(args: &Args) -> Result<RunSpec, SpecError> {
    let mut spec = match &args.config {
        Some(path) => RunSpec::load(path)?,
        None => RunSpec::default(),
    };
    spec.problem = args.problem.or(spec.problem);
    spec.schedule = args.schedule.or(spec.schedule);
    spec.rho = args.rho.or(spec.rho);
    spec.eta0 = args.eta0.or(spec.eta0);
    spec.seed = args.seed.or(spec.seed);
    spec.out_dir = args.out_dir.clone().or(spec.out_dir);
    Ok(spec)
}

fn report_error(out_dir: &std::path::Path, summary: RunSummary, code: i32) -> i32 {
    eprintln!("error: {}", summary.error.as_deref().unwrap_or("unknown"));
    if std::fs::create_dir_all(out_dir).is_ok() {
        if let Err(e) = write_summary(out_dir, &summary) {
            eprintln!("error: {e}");
        }
    }
    code
}

fn print_result(r: &SolveResult, s: &MethodSummary) {
    println!(
        "{:?}: {:?} after {} outer / {} inner iterations, |F| = {:.3e}, toggles = {}, floats = {}, rate = {:?}",
        r.method,
        r.status,
        s.outer_iterations,
        s.inner_iterations,
        s.final_f_norm,
        s.active_set_changes,
        s.comm.floats_sent_total,
        s.rate.class
    );
    if let Some(d) = &r.diagnostic {
        println!("  {d}");
    }
}

pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_CONVERGED };
            let _ = e.print();
            return code;
        }
    };
    let default_dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let mut summary = RunSummary {
        problem: args.problem,
        seed: args.seed.unwrap_or(0),
        config: None,
        runs: Vec::new(),
        agreement: None,
        error: None,
    };
    let spec = match merged_spec(&args) {
        Ok(s) => s,
        Err(e) => {
            summary.error = Some(e.to_string());
            return report_error(&default_dir, summary, EXIT_CONFIG);
        }
    };
    let out_dir = spec.out_dir.clone().unwrap_or(default_dir);
    let id = spec.problem.unwrap_or(ProblemId::P1);
    let seed = spec.seed.unwrap_or(0);
    summary.problem = Some(id);
    summary.seed = seed;
    let bench = match load_problem(id, seed) {
        Ok(b) => b,
        Err(e) => {
            summary.error = Some(e.to_string());
            return report_error(&out_dir, summary, EXIT_CONFIG);
        }
    };
    let config = match spec.sqp_config(bench.rho) {
        Ok(c) => c,
        Err(e) => {
            summary.error = Some(e.to_string());
            return report_error(&out_dir, summary, EXIT_CONFIG);
        }
    };
    summary.config = Some(config.clone());
    let x0 = match spec.start(&bench) {
        Ok(x) => x,
        Err(e) => {
            summary.error = Some(e.to_string());
            return report_error(&out_dir, summary, EXIT_CONFIG);
        }
    };
    let p0 = crate::model::PrimalDualPoint::from_primal(&bench.problem, x0);

    let mut results: Vec<SolveResult> = Vec::new();
    if !args.baseline {
        match run_dsqp(&bench.problem, &p0, &config) {
            Ok(r) => results.push(r),
            Err(e) => {
                let code = if matches!(e, SolveError::Config(_)) { EXIT_CONFIG } else { EXIT_FAILURE };
                summary.error = Some(e.to_string());
                return report_error(&out_dir, summary, code);
            }
        }
    }
    if args.baseline || args.compare {
        match baseline_sqp(&bench.problem, &p0, config.eps, config.k_max, config.delta) {
            Ok(r) => results.push(r),
            Err(e) => {
                summary.error = Some(e.to_string());
                return report_error(&out_dir, summary, EXIT_FAILURE);
            }
        }
    }
    if let [a, b] = results.as_slice() {
        summary.agreement = Some(a.point.primal_distance_inf(&b.point));
    }

    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return EXIT_FAILURE;
    }
    for r in &results {
        let s = MethodSummary::new(r, bench.problem.objective(&r.point.x));
        print_result(r, &s);
        if let Err(e) = write_traces(&out_dir, r) {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
        summary.runs.push(s);
    }
    if let Some(a) = summary.agreement {
        println!("agreement |x_dsqp - x_baseline| = {a:.3e}");
    }
    if let Err(e) = write_summary(&out_dir, &summary) {
        eprintln!("error: {e}");
        return EXIT_FAILURE;
    }
    exit_code(results[0].status)
}
