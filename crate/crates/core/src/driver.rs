//! Outer SQP loops: the decentralized method with inexact ADMM inner solves
//! and the exact baseline that solves the coupled QP monolithically.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admm::{self, AdmmError, AdmmState, CouplingUpdate, InnerOptions, InnerRecord};
use crate::comm::{CommLayer, CommStats};
use crate::linalg;
use crate::model::{evaluate_all, ModelError, PartitionedNlp, PrimalDualPoint, SensitivityPack, DEFAULT_DELTA};
use crate::qp::{self, DenseQp, QpStatus};
use crate::residuals::{self, eval_f, CriterionValue, LocalDirection};

pub const ETA_FLOOR: f64 = 1e-12;
/// Inner thresholds never drop below this multiple of the outer tolerance.
pub const THRESHOLD_FLOOR_FACTOR: f64 = 1e-3;
pub const ETA_CEIL: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EtaSchedule {
    Constant,
    Geometric { factor: f64 },
    /// `η^k = min(η⁰, scale ‖F̃^k‖∞)`
    ResidualProportional { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdmmInit {
    /// `s̄⁰ = 0`, `γ⁰ = γ^k`
    Zero,
    /// `s̄⁰` from the previous inner loop, `γ⁰ = γ^k`
    Warm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StallPolicy {
    Abort,
    /// Take the best inner iterate and continue; convergence guarantees are void.
    AcceptBest,
}

/// Right-hand side of the inner stopping test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriterionScope {
    /// `η ‖F̃^k‖∞` with the global norm, max-reduced once per outer iteration.
    Global,
    /// `η ‖F̃_i^k‖∞` per subsystem; stricter, needs no reduction.
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqpConfig {
    pub eps: f64,
    pub eta0: f64,
    pub schedule: EtaSchedule,
    pub rho: f64,
    pub delta: f64,
    pub k_max: usize,
    pub l_max: usize,
    pub admm_init: AdmmInit,
    pub stall_policy: StallPolicy,
    pub criterion_scope: CriterionScope,
    pub parallel: bool,
}

impl Default for SqpConfig {
    fn default() -> Self {
        SqpConfig {
            eps: 1e-8,
            eta0: 0.8,
            schedule: EtaSchedule::Geometric { factor: 0.9 },
            rho: 1e3,
            delta: DEFAULT_DELTA,
            k_max: 100,
            l_max: admm::DEFAULT_L_MAX,
            admm_init: AdmmInit::Zero,
            stall_policy: StallPolicy::Abort,
            criterion_scope: CriterionScope::Global,
            parallel: false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("eta0 out of (0,1): {0}")]
    Eta0(f64),
    #[error("geometric factor out of (0,1): {0}")]
    GeometricFactor(f64),
    #[error("residual scale must be positive: {0}")]
    ResidualScale(f64),
    #[error("{name} must be positive: {value}")]
    NonPositive { name: &'static str, value: f64 },
}

impl SqpConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.eta0 > 0.0 && self.eta0 < 1.0) {
            return Err(ConfigError::Eta0(self.eta0));
        }
        match self.schedule {
            EtaSchedule::Geometric { factor } if !(factor > 0.0 && factor < 1.0) => {
                return Err(ConfigError::GeometricFactor(factor));
            }
            EtaSchedule::ResidualProportional { scale } if scale.is_nan() || scale <= 0.0 => {
                return Err(ConfigError::ResidualScale(scale));
            }
            _ => {}
        }
        for (name, value) in [("rho", self.rho), ("delta", self.delta), ("eps", self.eps)] {
            if value.is_nan() || value <= 0.0 {
                return Err(ConfigError::NonPositive { name, value });
            }
        }
        Ok(())
    }
}

/// Next forcing term. For the residual schedule `ftilde_norm` is the residual
/// the returned value will be paired with.
pub fn update_eta(eta: f64, schedule: EtaSchedule, eta0: f64, ftilde_norm: f64) -> f64 {
    match schedule {
        EtaSchedule::Constant => eta,
        EtaSchedule::Geometric { factor } => (factor * eta).max(ETA_FLOOR),
        EtaSchedule::ResidualProportional { scale } => (scale * ftilde_norm).min(eta0).clamp(ETA_FLOOR, ETA_CEIL),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    OuterLimit,
    InnerStall,
    EvaluationFailure,
    /// Linearized subproblem infeasible or constraint Jacobian rank deficient.
    LinearizationFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Dsqp,
    Baseline,
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OuterRecord {
    pub k: usize,
    pub f_norm: f64,
    pub ftilde_norm: f64,
    pub coupling_norm: f64,
    pub eta: f64,
    pub inner_iterations: usize,
    pub active_set_changes: usize,
    pub floats_cumulative: usize,
    /// `‖s̄‖∞` of the accepted step.
    pub step_norm: f64,
    pub active_sets: Vec<Vec<usize>>,
    pub regularized: Vec<bool>,
    pub update: Option<CouplingUpdate>,
    pub accepted_stall: bool,
    #[serde(skip)]
    pub inner: Vec<InnerRecord>,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub method: Method,
    pub status: SolveStatus,
    pub point: PrimalDualPoint,
    /// `p⁰, p¹, …` including the final point.
    pub iterates: Vec<PrimalDualPoint>,
    pub trace: Vec<OuterRecord>,
    pub comm: CommStats,
    pub final_f_norm: f64,
    pub final_ftilde_norm: f64,
    pub diagnostic: Option<String>,
}

impl SolveResult {
    pub fn outer_iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn inner_iterations(&self) -> usize {
        self.trace.iter().map(|r| r.inner_iterations).sum()
    }

    pub fn active_set_changes(&self) -> usize {
        self.trace.iter().map(|r| r.active_set_changes).sum()
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

struct Outcome {
    status: SolveStatus,
    diagnostic: Option<String>,
}

fn finish(
    method: Method,
    outcome: Outcome,
    point: PrimalDualPoint,
    mut iterates: Vec<PrimalDualPoint>,
    trace: Vec<OuterRecord>,
    comm: CommStats,
    problem: &PartitionedNlp,
) -> SolveResult {
    let (f, ft) = match eval_f(problem, &point) {
        Ok(r) => (r.norm_inf(), r.tilde_norm_inf()),
        Err(_) => (f64::NAN, f64::NAN),
    };
    if iterates.last() != Some(&point) {
        iterates.push(point.clone());
    }
    SolveResult {
        method,
        status: outcome.status,
        point,
        iterates,
        trace,
        comm,
        final_f_norm: f,
        final_ftilde_norm: ft,
        diagnostic: outcome.diagnostic,
    }
}

fn local_converged(problem: &PartitionedNlp, r: &residuals::ResidualBlocks, eps: f64) -> Vec<bool> {
    let coupling_ok = r.coupling_norm_inf() <= eps;
    (0..problem.n_subsystems())
        .map(|i| coupling_ok && r.local_norm_inf(i) <= eps)
        .collect()
}

fn regularized_pack(problem: &PartitionedNlp, p: &PrimalDualPoint, delta: f64, parallel: bool) -> Result<SensitivityPack, ModelError> {
    let mut pack = evaluate_all(problem, p, parallel)?;
    pack.regularize(delta)?;
    Ok(pack)
}

fn model_outcome(e: &ModelError) -> Outcome {
    let status = match e {
        ModelError::RankDeficient { .. } => SolveStatus::LinearizationFailure,
        _ => SolveStatus::EvaluationFailure,
    };
    Outcome {
        status,
        diagnostic: Some(e.to_string()),
    }
}

/// Decentralized SQP with inexact ADMM inner solves.
pub fn run_dsqp(problem: &PartitionedNlp, p0: &PrimalDualPoint, config: &SqpConfig) -> Result<SolveResult, SolveError> {
    config.validate()?;
    p0.check_dims(problem)?;
    let mut comm = CommLayer::new(problem);
    let mut p = p0.clone();
    let mut iterates = vec![p.clone()];
    let mut trace: Vec<OuterRecord> = Vec::new();
    let mut eta = config.eta0;
    let mut prev_active: Option<Vec<Vec<usize>>> = None;
    let mut prev_s_bar: Option<Vec<DVector<f64>>> = None;
    let mut floats = 0;
    for k in 0..=config.k_max {
        let r = match eval_f(problem, &p) {
            Ok(r) => r,
            Err(e) => return Ok(finish(Method::Dsqp, model_outcome(&e), p, iterates, trace, comm.stats, problem)),
        };
        let flags = local_converged(problem, &r, config.eps);
        if comm.allreduce_flags(&flags) {
            let outcome = Outcome {
                status: SolveStatus::Converged,
                diagnostic: None,
            };
            return Ok(finish(Method::Dsqp, outcome, p, iterates, trace, comm.stats, problem));
        }
        if k == config.k_max {
            break;
        }
        let pack = match regularized_pack(problem, &p, config.delta, config.parallel) {
            Ok(pk) => pk,
            Err(e) => return Ok(finish(Method::Dsqp, model_outcome(&e), p, iterates, trace, comm.stats, problem)),
        };
        let ftilde_norm = r.tilde_norm_inf();
        if let EtaSchedule::ResidualProportional { .. } = config.schedule {
            eta = update_eta(eta, config.schedule, config.eta0, ftilde_norm);
        }
        let blocks = residuals::eval_ftilde_blocks(problem, &pack, &p);
        let reference = match config.criterion_scope {
            CriterionScope::Global => {
                let local: Vec<f64> = blocks.iter().map(|b| b.f_tilde_norm_inf()).collect();
                Some(comm.allreduce_max(&local))
            }
            CriterionScope::Local => None,
        };
        let update = CouplingUpdate::select(problem, &p.x);
        let s_bar0 = match (config.admm_init, &prev_s_bar) {
            (AdmmInit::Warm, Some(prev)) => prev.clone(),
            _ => problem.var_dims().into_iter().map(DVector::zeros).collect(),
        };
        let state = AdmmState::new(problem, s_bar0, p.gamma.clone(), config.rho);
        let opts = InnerOptions {
            rho: config.rho,
            l_max: config.l_max,
            parallel: config.parallel,
            update,
        };
        let eta_k = eta;
        let floor = THRESHOLD_FLOOR_FACTOR * config.eps;
        let pk = &p;
        let mut stop = |st: &AdmmState| -> Result<Vec<CriterionValue>, AdmmError> {
            blocks
                .iter()
                .map(|b| {
                    let i = b.subsystem;
                    let d = LocalDirection::from_candidate(pk, i, &st.s_bar[i], &st.nu_qp[i], &st.mu_qp[i], &st.gamma[i]);
                    let mut v = match reference {
                        Some(r) => residuals::local_criterion_with_reference(b, &d, eta_k, r),
                        None => residuals::local_modified_criterion(b, &d, eta_k),
                    }?;
                    if v.rhs < floor {
                        v.rhs = floor;
                        v.satisfied = v.lhs <= floor;
                    }
                    Ok(v)
                })
                .collect()
        };
        let inner = admm::run_inner(problem, &pack, &p.x, state, &opts, &mut comm, prev_active.clone(), &mut stop);
        let (state, inner_trace, accepted_stall) = match inner {
            Ok(out) => (out.state, out.trace, false),
            Err(AdmmError::Stall { best, trace: t }) if config.stall_policy == StallPolicy::AcceptBest => {
                log::warn!("outer iteration {k}: inner loop stalled, accepting best iterate");
                (*best, t, true)
            }
            Err(e) => {
                let status = match e {
                    AdmmError::Stall { .. } => SolveStatus::InnerStall,
                    AdmmError::LocalInfeasible { .. }
                    | AdmmError::LocalIterationLimit { .. }
                    | AdmmError::LocalQp { .. }
                    | AdmmError::Coordination(_) => SolveStatus::LinearizationFailure,
                    _ => SolveStatus::EvaluationFailure,
                };
                let outcome = Outcome {
                    status,
                    diagnostic: Some(format!("outer iteration {k}: {e}")),
                };
                return Ok(finish(Method::Dsqp, outcome, p, iterates, trace, comm.stats, problem));
            }
        };
        floats = comm.stats.floats_sent_total.max(floats);
        let step_norm = linalg::blocks_norm_inf(&state.s_bar);
        trace.push(OuterRecord {
            k,
            f_norm: r.norm_inf(),
            ftilde_norm,
            coupling_norm: r.coupling_norm_inf(),
            eta: eta_k,
            inner_iterations: inner_trace.len(),
            active_set_changes: inner_trace.iter().map(|t| t.active_set_changes).sum(),
            floats_cumulative: floats,
            step_norm,
            active_sets: state.active_sets.clone(),
            regularized: pack.blocks.iter().map(|b| b.regularized).collect(),
            update: Some(update),
            accepted_stall,
            inner: inner_trace,
        });
        for i in 0..problem.n_subsystems() {
            p.x[i] += &state.s_bar[i];
        }
        p.nu = state.nu_qp.clone();
        p.mu = state.mu_qp.clone();
        p.gamma = state.gamma.clone();
        iterates.push(p.clone());
        prev_active = Some(state.active_sets.clone());
        prev_s_bar = Some(state.s_bar);
        if !matches!(config.schedule, EtaSchedule::ResidualProportional { .. }) {
            eta = update_eta(eta, config.schedule, config.eta0, ftilde_norm);
        }
    }
    let outcome = Outcome {
        status: SolveStatus::OuterLimit,
        diagnostic: Some(format!("no convergence within {} outer iterations", config.k_max)),
    };
    Ok(finish(Method::Dsqp, outcome, p, iterates, trace, comm.stats, problem))
}

/// The coupled QP at `p`, assembled monolithically. Variables are the stacked
/// steps; equality rows are `[blkdiag(∇g_iᵀ); E]`.
pub fn coupled_qp(problem: &PartitionedNlp, pack: &SensitivityPack, p: &PrimalDualPoint) -> DenseQp {
    let hs: Vec<&DMatrix<f64>> = pack.blocks.iter().map(|b| &b.hessian).collect();
    let jg: Vec<&DMatrix<f64>> = pack.blocks.iter().map(|b| &b.jac_eq).collect();
    let jh: Vec<&DMatrix<f64>> = pack.blocks.iter().map(|b| &b.jac_ineq).collect();
    let geq = linalg::block_diag(&jg);
    let e = problem.stacked_coupling();
    let n = problem.n_vars_total();
    let mut a_eq = DMatrix::zeros(geq.nrows() + e.nrows(), n);
    a_eq.view_mut((0, 0), geq.shape()).copy_from(&geq);
    a_eq.view_mut((geq.nrows(), 0), e.shape()).copy_from(&e);
    let g: Vec<DVector<f64>> = pack.blocks.iter().map(|b| b.eq_values.clone()).collect();
    let h: Vec<DVector<f64>> = pack.blocks.iter().map(|b| b.ineq_values.clone()).collect();
    let grad: Vec<DVector<f64>> = pack.blocks.iter().map(|b| b.grad_f.clone()).collect();
    DenseQp {
        h: linalg::block_diag(&hs),
        q: linalg::concat(&grad),
        a_eq,
        b_eq: linalg::concat(&[linalg::concat(&g), problem.coupling_residual(&p.x)]),
        a_in: linalg::block_diag(&jh),
        b_in: linalg::concat(&h),
    }
}

/// Exact SQP: every step solves the coupled QP to optimality.
pub fn baseline_sqp(
    problem: &PartitionedNlp,
    p0: &PrimalDualPoint,
    eps: f64,
    k_max: usize,
    delta: f64,
) -> Result<SolveResult, SolveError> {
    p0.check_dims(problem)?;
    let mut p = p0.clone();
    let mut iterates = vec![p.clone()];
    let mut trace: Vec<OuterRecord> = Vec::new();
    let mut warm: Option<Vec<usize>> = None;
    let mut prev_active: Option<Vec<Vec<usize>>> = None;
    let n_geq: usize = problem.eq_dims().iter().sum();
    let stats = CommStats {
        centralized: true,
        ..CommStats::default()
    };
    for k in 0..=k_max {
        let r = match eval_f(problem, &p) {
            Ok(r) => r,
            Err(e) => return Ok(finish(Method::Baseline, model_outcome(&e), p, iterates, trace, stats, problem)),
        };
        if local_converged(problem, &r, eps).iter().all(|&f| f) {
            let outcome = Outcome {
                status: SolveStatus::Converged,
                diagnostic: None,
            };
            return Ok(finish(Method::Baseline, outcome, p, iterates, trace, stats, problem));
        }
        if k == k_max {
            break;
        }
        let pack = match regularized_pack(problem, &p, delta, false) {
            Ok(pk) => pk,
            Err(e) => return Ok(finish(Method::Baseline, model_outcome(&e), p, iterates, trace, stats, problem)),
        };
        let qp = coupled_qp(problem, &pack, &p);
        let sol = match qp::solve_qp(&qp, warm.as_deref(), qp::DEFAULT_KKT_TOL) {
            Ok(s) if s.status == QpStatus::Solved => s,
            Ok(s) => {
                let outcome = Outcome {
                    status: SolveStatus::LinearizationFailure,
                    diagnostic: Some(format!("outer iteration {k}: coupled QP {:?}", s.status)),
                };
                return Ok(finish(Method::Baseline, outcome, p, iterates, trace, stats, problem));
            }
            Err(e) => {
                let outcome = Outcome {
                    status: SolveStatus::LinearizationFailure,
                    diagnostic: Some(format!("outer iteration {k}: {e}")),
                };
                return Ok(finish(Method::Baseline, outcome, p, iterates, trace, stats, problem));
            }
        };
        let s = linalg::split(&sol.s, &problem.var_dims());
        let nu = linalg::split(&sol.nu.rows(0, n_geq).into_owned(), &problem.eq_dims());
        let lambda = sol.nu.rows(n_geq, problem.n_coupling()).into_owned();
        let mu = linalg::split(&sol.mu, &problem.ineq_dims());
        let active_sets = split_active(&sol.active_set, &problem.ineq_dims());
        let changes = prev_active
            .as_ref()
            .map(|prev| prev.iter().zip(&active_sets).map(|(a, b)| admm::toggles(a, b)).sum())
            .unwrap_or(0);
        trace.push(OuterRecord {
            k,
            f_norm: r.norm_inf(),
            ftilde_norm: r.tilde_norm_inf(),
            coupling_norm: r.coupling_norm_inf(),
            eta: 0.0,
            inner_iterations: 0,
            active_set_changes: changes,
            floats_cumulative: 0,
            step_norm: linalg::norm_inf(&sol.s),
            active_sets: active_sets.clone(),
            regularized: pack.blocks.iter().map(|b| b.regularized).collect(),
            update: None,
            accepted_stall: false,
            inner: Vec::new(),
        });
        for (xi, si) in p.x.iter_mut().zip(&s) {
            *xi += si;
        }
        p.nu = nu;
        p.mu = mu;
        p.gamma = problem.gamma_from_lambda(&lambda);
        iterates.push(p.clone());
        warm = Some(sol.active_set);
        prev_active = Some(active_sets);
    }
    let outcome = Outcome {
        status: SolveStatus::OuterLimit,
        diagnostic: Some(format!("no convergence within {k_max} outer iterations")),
    };
    Ok(finish(Method::Baseline, outcome, p, iterates, trace, stats, problem))
}

/// Splits stacked inequality indices into per-subsystem local indices.
pub fn split_active(active: &[usize], dims: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); dims.len()];
    let mut offset = 0;
    for (i, &d) in dims.iter().enumerate() {
        out[i] = active
            .iter()
            .filter(|&&j| j >= offset && j < offset + d)
            .map(|&j| j - offset)
            .collect();
        offset += d;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_schedules() {
        let g = EtaSchedule::Geometric { factor: 0.9 };
        assert!((update_eta(0.8, g, 0.8, 1.0) - 0.72).abs() < 1e-15);
        assert_eq!(update_eta(0.5, EtaSchedule::Constant, 0.5, 3.0), 0.5);
        let r = EtaSchedule::ResidualProportional { scale: 1.0 };
        assert_eq!(update_eta(0.8, r, 0.8, 1e-4), 1e-4);
        assert_eq!(update_eta(0.8, r, 0.8, 5.0), 0.8);
        assert_eq!(update_eta(0.8, r, 0.8, 0.0), ETA_FLOOR);
        assert_eq!(update_eta(1e-12, g, 0.8, 1.0), ETA_FLOOR);
    }

    #[test]
    fn eta0_is_validated() {
        let cfg = SqpConfig {
            eta0: 1.5,
            ..SqpConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().starts_with("eta0 out of (0,1)"));
    }

    #[test]
    fn active_indices_are_split() {
        assert_eq!(split_active(&[0, 2, 3], &[1, 0, 3]), vec![vec![0], vec![], vec![1, 2]]);
    }
}
