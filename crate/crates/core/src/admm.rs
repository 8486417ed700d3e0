//! Inner ADMM over the copy-reformulated QP subproblem.
//!
//! One iteration performs, with `s̄`, `γ` fixed from the previous one,
//!
//! ```text
//!   s_i   = argmin ½ sᵀ(H_i + ρI)s + (∇f_i + γ_i − ρ s̄_i)ᵀ s
//!           s.t.   g_i + ∇g_iᵀ s = 0,  h_i + ∇h_iᵀ s <= 0
//!   s̄     = argmin Σ ρ/2 ‖s_i − s̄_i‖² − γ_iᵀ s̄_i  s.t.  Σ E_i (x_i + s̄_i) = c
//!   γ_i  += ρ (s_i − s̄_i)
//! ```
//!
//! In consensus form with `γ` in `range(Eᵀ)` the middle step is an average of
//! paired entries, routed through [`CommLayer`].

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::comm::{consensus_mean, CommError, CommLayer};
use crate::linalg::{self, norm_inf};
use crate::model::{BlockSensitivity, PartitionedNlp, SensitivityPack};
use crate::qp::{self, DenseQp, QpError, QpSolution, QpStatus};
use crate::residuals::{CriterionValue, ResidualError};

pub const DEFAULT_L_MAX: usize = 10_000;

/// Coupling residual below which averaging may replace the coordination QP.
pub const AVERAGING_FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone)]
pub enum AdmmError {
    #[error("local QP of subsystem {subsystem} is infeasible")]
    LocalInfeasible { subsystem: usize },
    #[error("local QP of subsystem {subsystem} hit its iteration limit")]
    LocalIterationLimit { subsystem: usize },
    #[error("local QP of subsystem {subsystem}: {source}")]
    LocalQp { subsystem: usize, source: QpError },
    #[error("coordination step failed: {0}")]
    Coordination(QpError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error(transparent)]
    Criterion(#[from] ResidualError),
    #[error("inner loop stalled after {} iterations", .trace.len())]
    Stall {
        best: Box<AdmmState>,
        trace: Vec<InnerRecord>,
    },
    #[error("rho must be positive, got {0}")]
    InvalidRho(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub l: usize,
    pub s: Vec<DVector<f64>>,
    pub s_bar: Vec<DVector<f64>>,
    pub gamma: Vec<DVector<f64>>,
    pub nu_qp: Vec<DVector<f64>>,
    pub mu_qp: Vec<DVector<f64>>,
    pub active_sets: Vec<Vec<usize>>,
    pub rho: f64,
}

impl AdmmState {
    /// `l = 0` state from `(s̄⁰, γ⁰)`; QP duals start at zero.
    pub fn new(problem: &PartitionedNlp, s_bar: Vec<DVector<f64>>, gamma: Vec<DVector<f64>>, rho: f64) -> Self {
        AdmmState {
            l: 0,
            s: s_bar.clone(),
            s_bar,
            gamma,
            nu_qp: problem.eq_dims().into_iter().map(DVector::zeros).collect(),
            mu_qp: problem.ineq_dims().into_iter().map(DVector::zeros).collect(),
            active_sets: vec![Vec::new(); problem.n_subsystems()],
            rho,
        }
    }
}

/// Per-iteration parameters of the local QP.
#[derive(Debug, Clone, Copy)]
pub struct LocalQpParams<'a> {
    pub s_bar: &'a DVector<f64>,
    pub gamma: &'a DVector<f64>,
}

pub fn local_qp(block: &BlockSensitivity, params: LocalQpParams<'_>, rho: f64) -> DenseQp {
    let n = block.grad_f.len();
    DenseQp {
        h: &block.hessian + DMatrix::identity(n, n) * rho,
        q: &block.grad_f + params.gamma - params.s_bar * rho,
        a_eq: block.jac_eq.clone(),
        b_eq: block.eq_values.clone(),
        a_in: block.jac_ineq.clone(),
        b_in: block.ineq_values.clone(),
    }
}

pub fn local_step(
    block: &BlockSensitivity,
    params: LocalQpParams<'_>,
    rho: f64,
    warm: Option<&[usize]>,
) -> Result<QpSolution, AdmmError> {
    let subsystem = block.subsystem;
    let sol = qp::solve_qp(&local_qp(block, params, rho), warm, qp::DEFAULT_KKT_TOL)
        .map_err(|source| AdmmError::LocalQp { subsystem, source })?;
    match sol.status {
        QpStatus::Solved => Ok(sol),
        QpStatus::Infeasible => Err(AdmmError::LocalInfeasible { subsystem }),
        QpStatus::IterationLimit => Err(AdmmError::LocalIterationLimit { subsystem }),
    }
}

/// Consensus averaging computed directly, without the message layer.
pub fn averaging_step(problem: &PartitionedNlp, s: &[DVector<f64>]) -> Result<Vec<DVector<f64>>, AdmmError> {
    let map = problem.consensus.as_ref().ok_or(CommError::NotConsensus)?;
    let mut s_bar = s.to_vec();
    for g in &map.groups {
        let mean = consensus_mean(
            s[g.owner.subsystem][g.owner.coord],
            g.copies.iter().map(|(_, c)| s[c.subsystem][c.coord]),
        );
        s_bar[g.owner.subsystem][g.owner.coord] = mean;
        for (_, c) in &g.copies {
            s_bar[c.subsystem][c.coord] = mean;
        }
    }
    Ok(s_bar)
}

/// Equality-constrained minimization over the copies, solved centrally.
pub fn coordination_step(
    problem: &PartitionedNlp,
    s: &[DVector<f64>],
    gamma: &[DVector<f64>],
    rho: f64,
    x: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>, AdmmError> {
    let n = problem.n_vars_total();
    let s_flat = linalg::concat(s);
    let g_flat = linalg::concat(gamma);
    let h = DMatrix::identity(n, n) * rho;
    let q = -(s_flat * rho + g_flat);
    let a = problem.stacked_coupling();
    let b = problem.coupling_residual(x);
    let (s_bar, _) = qp::solve_eq_qp(&h, &q, &a, &b).map_err(AdmmError::Coordination)?;
    Ok(linalg::split(&s_bar, &problem.var_dims()))
}

/// `γ + ρ (s − s̄)`.
pub fn dual_step(gamma: &DVector<f64>, s: &DVector<f64>, s_bar: &DVector<f64>, rho: f64) -> DVector<f64> {
    gamma + (s - s_bar) * rho
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingUpdate {
    Averaging,
    Coordination,
}

impl CouplingUpdate {
    /// Averaging when the problem is in consensus form and `x` is coupling feasible.
    pub fn select(problem: &PartitionedNlp, x: &[DVector<f64>]) -> Self {
        if problem.is_consensus() && norm_inf(&problem.coupling_residual(x)) <= AVERAGING_FEASIBILITY_TOL {
            CouplingUpdate::Averaging
        } else {
            CouplingUpdate::Coordination
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InnerRecord {
    pub l: usize,
    /// Per subsystem left-hand side of the local stopping test.
    pub criterion: Vec<f64>,
    /// Per subsystem right-hand side `η ‖F̃_i‖∞`.
    pub threshold: Vec<f64>,
    pub satisfied: Vec<bool>,
    /// `‖s − s̄‖∞`
    pub primal_residual: f64,
    /// `‖γ^{l+1} − γ^l‖∞`
    pub dual_change: f64,
    pub active_set_changes: usize,
    pub floats: usize,
}

/// Symmetric difference size between two sorted index lists.
pub fn toggles(a: &[usize], b: &[usize]) -> usize {
    a.iter().filter(|j| !b.contains(j)).count() + b.iter().filter(|j| !a.contains(j)).count()
}

#[derive(Debug, Clone, Copy)]
pub struct InnerOptions {
    pub rho: f64,
    pub l_max: usize,
    pub parallel: bool,
    pub update: CouplingUpdate,
}

/// One ADMM iteration in place. Returns the record without criterion values.
pub fn admm_iteration(
    problem: &PartitionedNlp,
    pack: &SensitivityPack,
    x: &[DVector<f64>],
    state: &mut AdmmState,
    opts: &InnerOptions,
    comm: &mut CommLayer,
    previous_active: Option<&[Vec<usize>]>,
) -> Result<InnerRecord, AdmmError> {
    let rho = state.rho;
    let solve = |b: &BlockSensitivity| {
        let i = b.subsystem;
        let params = LocalQpParams {
            s_bar: &state.s_bar[i],
            gamma: &state.gamma[i],
        };
        let warm = previous_active.map(|a| a[i].as_slice());
        local_step(b, params, rho, warm)
    };
    let sols: Result<Vec<QpSolution>, AdmmError> = if opts.parallel {
        pack.blocks.par_iter().map(solve).collect()
    } else {
        pack.blocks.iter().map(solve).collect()
    };
    let sols = sols?;
    let s: Vec<DVector<f64>> = sols.iter().map(|q| q.s.clone()).collect();
    let floats_before = comm.stats.floats_sent_total;
    let s_bar = match opts.update {
        CouplingUpdate::Averaging => comm.exchange_and_average(&s)?,
        CouplingUpdate::Coordination => {
            comm.record_centralized();
            coordination_step(problem, &s, &state.gamma, rho, x)?
        }
    };
    let gamma: Vec<DVector<f64>> = (0..s.len())
        .map(|i| dual_step(&state.gamma[i], &s[i], &s_bar[i], rho))
        .collect();
    let mut changes = 0;
    if let Some(prev) = previous_active {
        for (i, q) in sols.iter().enumerate() {
            changes += toggles(&prev[i], &q.active_set);
        }
    }
    let primal_residual = s
        .iter()
        .zip(&s_bar)
        .map(|(a, b)| norm_inf(&(a - b)))
        .fold(0.0, f64::max);
    let dual_change = gamma
        .iter()
        .zip(&state.gamma)
        .map(|(a, b)| norm_inf(&(a - b)))
        .fold(0.0, f64::max);
    state.l += 1;
    state.nu_qp = sols.iter().map(|q| q.nu.clone()).collect();
    state.mu_qp = sols.iter().map(|q| q.mu.clone()).collect();
    state.active_sets = sols.into_iter().map(|q| q.active_set).collect();
    state.s = s;
    state.s_bar = s_bar;
    state.gamma = gamma;
    Ok(InnerRecord {
        l: state.l,
        criterion: Vec::new(),
        threshold: Vec::new(),
        satisfied: Vec::new(),
        primal_residual,
        dual_change,
        active_set_changes: changes,
        floats: comm.stats.floats_sent_total - floats_before,
    })
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub state: AdmmState,
    pub trace: Vec<InnerRecord>,
}

/// Runs ADMM from `state` until every subsystem's local test holds.
///
/// `stop` returns one [`CriterionValue`] per subsystem for the current state;
/// the flags are AND-reduced through `comm`. `previous_active` seeds the
/// working sets and the toggle count of the first iteration.
#[allow(clippy::too_many_arguments)]
pub fn run_inner(
    problem: &PartitionedNlp,
    pack: &SensitivityPack,
    x: &[DVector<f64>],
    mut state: AdmmState,
    opts: &InnerOptions,
    comm: &mut CommLayer,
    previous_active: Option<Vec<Vec<usize>>>,
    stop: &mut dyn FnMut(&AdmmState) -> Result<Vec<CriterionValue>, AdmmError>,
) -> Result<InnerOutcome, AdmmError> {
    if opts.rho.is_nan() || opts.rho <= 0.0 {
        return Err(AdmmError::InvalidRho(opts.rho));
    }
    state.rho = opts.rho;
    let mut trace = Vec::new();
    let mut prev = previous_active;
    let mut best: Option<(f64, AdmmState)> = None;
    while state.l < opts.l_max {
        let mut rec = admm_iteration(problem, pack, x, &mut state, opts, comm, prev.as_deref())?;
        let values = stop(&state)?;
        rec.criterion = values.iter().map(|v| v.lhs).collect();
        rec.threshold = values.iter().map(|v| v.rhs).collect();
        rec.satisfied = values.iter().map(|v| v.satisfied).collect();
        let done = comm.allreduce_flags(&rec.satisfied);
        trace.push(rec);
        if done {
            return Ok(InnerOutcome { state, trace });
        }
        let score = values
            .iter()
            .map(|v| if v.rhs > 0.0 { v.lhs / v.rhs } else { f64::INFINITY })
            .fold(0.0, f64::max);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, state.clone()));
        }
        prev = Some(state.active_sets.clone());
    }
    let best = best.map(|(_, s)| s).unwrap_or(state);
    Err(AdmmError::Stall {
        best: Box::new(best),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{evaluate_all, PrimalDualPoint, SubsystemFunctions};
    use std::sync::Arc;

    fn free_block(n: usize) -> BlockSensitivity {
        BlockSensitivity {
            subsystem: 0,
            grad_f: DVector::zeros(n),
            jac_eq: DMatrix::zeros(0, n),
            jac_ineq: DMatrix::zeros(0, n),
            hessian: DMatrix::identity(n, n),
            eq_values: DVector::zeros(0),
            ineq_values: DVector::zeros(0),
            regularized: false,
        }
    }

    #[test]
    fn proximal_average() {
        let b = free_block(2);
        let sb = DVector::from_vec(vec![1.0, 1.0]);
        let g = DVector::zeros(2);
        let sol = local_step(&b, LocalQpParams { s_bar: &sb, gamma: &g }, 1.0, None).unwrap();
        assert!((sol.s - DVector::from_vec(vec![0.5, 0.5])).amax() < 1e-15);
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn linear_terms_cancel() {
        let b = free_block(3);
        let sb = DVector::from_vec(vec![0.3, -2.0, 5.0]);
        let g = &sb * 7.0;
        let sol = local_step(&b, LocalQpParams { s_bar: &sb, gamma: &g }, 7.0, None).unwrap();
        assert!(sol.s.amax() < 1e-14);
    }

    #[test]
    fn dual_step_examples() {
        let g = DVector::from_vec(vec![1.0, 2.0]);
        let s = DVector::from_vec(vec![0.5, 0.5]);
        assert_eq!(dual_step(&g, &s, &s, 3.0), g);
        let z = DVector::zeros(2);
        let d = DVector::from_vec(vec![1e-3, 0.0]);
        let out = dual_step(&z, &d, &z, 1e3);
        assert!((out - DVector::from_vec(vec![1.0, 0.0])).amax() < 1e-15);
    }

    #[derive(Debug)]
    struct Free(usize);
    impl SubsystemFunctions for Free {
        fn n_vars(&self) -> usize {
            self.0
        }
        fn objective(&self, x: &DVector<f64>) -> f64 {
            0.5 * x.norm_squared()
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            x.clone()
        }
        fn lagrangian_hessian(&self, x: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::identity(x.len(), x.len())
        }
    }

    fn pair_problem() -> PartitionedNlp {
        PartitionedNlp::new(
            vec![
                (Arc::new(Free(1)), DMatrix::from_element(1, 1, 1.0)),
                (Arc::new(Free(1)), DMatrix::from_element(1, 1, -1.0)),
            ],
            DVector::zeros(1),
        )
        .unwrap()
    }

    #[test]
    fn two_point_average_and_fixed_point() {
        let p = pair_problem();
        let s = vec![DVector::from_element(1, 2.0), DVector::from_element(1, 4.0)];
        let sb = averaging_step(&p, &s).unwrap();
        assert_eq!((sb[0][0], sb[1][0]), (3.0, 3.0));
        let same = vec![DVector::from_element(1, 3.0); 2];
        assert_eq!(averaging_step(&p, &same).unwrap(), same);
    }

    #[test]
    fn coordination_matches_averaging_for_range_multipliers() {
        let p = pair_problem();
        let rho = 5.0;
        let s = vec![DVector::from_element(1, 2.0), DVector::from_element(1, 4.0)];
        let x = vec![DVector::zeros(1), DVector::zeros(1)];
        for t in [-3.0, 0.0, 0.7] {
            let gamma = vec![DVector::from_element(1, rho * t), DVector::from_element(1, -rho * t)];
            let c = coordination_step(&p, &s, &gamma, rho, &x).unwrap();
            assert!((c[0][0] - 3.0).abs() < 1e-12 && (c[1][0] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coordination_without_coupling_is_shifted_copy() {
        let p = PartitionedNlp::new(vec![(Arc::new(Free(2)), DMatrix::zeros(0, 2))], DVector::zeros(0)).unwrap();
        let s = vec![DVector::from_vec(vec![1.0, -1.0])];
        let g = vec![DVector::from_vec(vec![2.0, 4.0])];
        let out = coordination_step(&p, &s, &g, 2.0, &[DVector::zeros(2)]).unwrap();
        assert!((&out[0] - DVector::from_vec(vec![2.0, 1.0])).amax() < 1e-14);
    }

    #[test]
    fn uncoupled_problem_stops_after_one_iteration() {
        let p = PartitionedNlp::new(vec![(Arc::new(Free(2)), DMatrix::zeros(0, 2))], DVector::zeros(0)).unwrap();
        let x0 = vec![DVector::from_vec(vec![1.0, 2.0])];
        let pt = PrimalDualPoint::from_primal(&p, x0.clone());
        let pack = evaluate_all(&p, &pt, false).unwrap();
        let mut comm = CommLayer::new(&p);
        let opts = InnerOptions {
            rho: 1.0,
            l_max: 10,
            parallel: false,
            update: CouplingUpdate::Coordination,
        };
        let state = AdmmState::new(&p, vec![DVector::zeros(2)], vec![DVector::zeros(2)], 1.0);
        let mut stop = |_: &AdmmState| {
            Ok(vec![CriterionValue {
                lhs: 0.0,
                f_tilde_norm: 0.0,
                rhs: 0.0,
                satisfied: true,
            }])
        };
        let out = run_inner(&p, &pack, &x0, state, &opts, &mut comm, None, &mut stop).unwrap();
        assert_eq!(out.state.l, 1);
        assert_eq!(out.state.s_bar, out.state.s);
        assert_eq!(comm.stats.flags_sent, 1);
    }

    #[test]
    fn stall_carries_state() {
        let p = pair_problem();
        let x0 = vec![DVector::zeros(1), DVector::zeros(1)];
        let pt = PrimalDualPoint::from_primal(&p, x0.clone());
        let pack = evaluate_all(&p, &pt, false).unwrap();
        let mut comm = CommLayer::new(&p);
        let opts = InnerOptions {
            rho: 1.0,
            l_max: 3,
            parallel: false,
            update: CouplingUpdate::Averaging,
        };
        let state = AdmmState::new(&p, x0.clone(), x0.clone(), 1.0);
        let mut stop = |_: &AdmmState| {
            Ok(vec![
                CriterionValue {
                    lhs: 1.0,
                    f_tilde_norm: 1.0,
                    rhs: 0.5,
                    satisfied: false,
                };
                2
            ])
        };
        match run_inner(&p, &pack, &x0, state, &opts, &mut comm, None, &mut stop) {
            Err(AdmmError::Stall { best, trace }) => {
                assert_eq!(trace.len(), 3);
                assert!(best.l >= 1);
            }
            other => panic!("expected stall, got {other:?}"),
        }
        assert_eq!(comm.stats.floats_sent_total, 3 * 2);
    }
}
