//! Tab-separated outer/inner traces and the JSON run summary.
//!
//! Outer columns: `k f_norm ftilde_norm coupling_norm eta inner_iterations
//! active_set_changes floats_cumulative step_norm active_sets update
//! accepted_stall`. Inner columns: `k l criterion_max threshold_min satisfied
//! primal_residual dual_change active_set_changes floats`.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::CommStats;
use crate::driver::{Method, SolveResult, SolveStatus, SqpConfig};
use crate::problems::ProblemId;
use crate::rate::{estimate_rate, RateReport};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRow {
    pub k: usize,
    pub f_norm: f64,
    pub ftilde_norm: f64,
    pub coupling_norm: f64,
    pub eta: f64,
    pub inner_iterations: usize,
    pub active_set_changes: usize,
    pub floats_cumulative: usize,
    pub step_norm: f64,
    /// Per subsystem, `;`-separated; indices within a subsystem `,`-separated.
    pub active_sets: String,
    pub update: String,
    pub accepted_stall: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerRow {
    pub k: usize,
    pub l: usize,
    pub criterion_max: f64,
    pub threshold_min: f64,
    pub satisfied: bool,
    pub primal_residual: f64,
    pub dual_change: f64,
    pub active_set_changes: usize,
    pub floats: usize,
}

pub fn format_active_sets(sets: &[Vec<usize>]) -> String {
    sets.iter()
        .map(|s| s.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn outer_rows(result: &SolveResult) -> Vec<OuterRow> {
    result
        .trace
        .iter()
        .map(|r| OuterRow {
            k: r.k,
            f_norm: r.f_norm,
            ftilde_norm: r.ftilde_norm,
            coupling_norm: r.coupling_norm,
            eta: r.eta,
            inner_iterations: r.inner_iterations,
            active_set_changes: r.active_set_changes,
            floats_cumulative: r.floats_cumulative,
            step_norm: r.step_norm,
            active_sets: format_active_sets(&r.active_sets),
            update: match r.update {
                Some(u) => serde_json::to_value(u).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
                None => "exact".to_string(),
            },
            accepted_stall: r.accepted_stall,
        })
        .collect()
}

pub fn inner_rows(result: &SolveResult) -> Vec<InnerRow> {
    result
        .trace
        .iter()
        .flat_map(|r| {
            r.inner.iter().map(move |t| InnerRow {
                k: r.k,
                l: t.l,
                criterion_max: t.criterion.iter().copied().fold(0.0, f64::max),
                threshold_min: t.threshold.iter().copied().fold(f64::INFINITY, f64::min),
                satisfied: t.satisfied.iter().all(|&s| s),
                primal_residual: t.primal_residual,
                dual_change: t.dual_change,
                active_set_changes: t.active_set_changes,
                floats: t.floats,
            })
        })
        .collect()
}

pub fn write_tsv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<(), TraceError> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| TraceError::Io {
        path: PathBuf::new(),
        source,
    })?;
    Ok(())
}

pub fn read_tsv<T: for<'de> Deserialize<'de>, R: Read>(input: R) -> Result<Vec<T>, TraceError> {
    let mut r = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(input);
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub status: SolveStatus,
    pub converged: bool,
    pub diagnostic: Option<String>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub active_set_changes: usize,
    pub final_f_norm: f64,
    pub final_ftilde_norm: f64,
    pub objective: f64,
    pub x: Vec<Vec<f64>>,
    pub comm: CommStats,
    /// Errors `‖p^k − p_final‖∞` with the final iterate standing in for `p⋆`.
    pub rate: RateReport,
}

impl MethodSummary {
    pub fn new(result: &SolveResult, objective: f64) -> Self {
        let errors: Vec<f64> = result
            .iterates
            .iter()
            .map(|p| p.distance_inf(&result.point))
            .collect();
        MethodSummary {
            method: result.method,
            status: result.status,
            converged: result.converged(),
            diagnostic: result.diagnostic.clone(),
            outer_iterations: result.outer_iterations(),
            inner_iterations: result.inner_iterations(),
            active_set_changes: result.active_set_changes(),
            final_f_norm: result.final_f_norm,
            final_ftilde_norm: result.final_ftilde_norm,
            objective,
            x: result.point.x.iter().map(|v| v.as_slice().to_vec()).collect(),
            comm: result.comm.clone(),
            rate: estimate_rate(&errors),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub problem: Option<ProblemId>,
    pub seed: u64,
    pub config: Option<SqpConfig>,
    pub runs: Vec<MethodSummary>,
    /// `‖x_dsqp − x_baseline‖∞` when both methods ran.
    pub agreement: Option<f64>,
    /// Machine-readable error when the run could not start.
    pub error: Option<String>,
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Dsqp => "dsqp",
        Method::Baseline => "baseline",
    }
}

fn create(path: &Path) -> Result<std::fs::File, TraceError> {
    std::fs::File::create(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn outer_path(dir: &Path, method: Method) -> PathBuf {
    dir.join(format!("{}_outer.tsv", method_name(method)))
}

pub fn inner_path(dir: &Path, method: Method) -> PathBuf {
    dir.join(format!("{}_inner.tsv", method_name(method)))
}

pub fn summary_path(dir: &Path) -> PathBuf {
    dir.join("summary.json")
}

/// Writes `<method>_outer.tsv` and `<method>_inner.tsv` into `dir`.
pub fn write_traces(dir: &Path, result: &SolveResult) -> Result<(), TraceError> {
    write_tsv(&outer_rows(result), create(&outer_path(dir, result.method))?)?;
    write_tsv(&inner_rows(result), create(&inner_path(dir, result.method))?)?;
    Ok(())
}

pub fn write_summary(dir: &Path, summary: &RunSummary) -> Result<(), TraceError> {
    let path = summary_path(dir);
    let mut f = create(&path)?;
    serde_json::to_writer_pretty(&mut f, summary)?;
    f.write_all(b"\n").map_err(|source| TraceError::Io { path, source })?;
    Ok(())
}
