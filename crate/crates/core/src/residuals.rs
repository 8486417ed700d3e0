//! KKT residual maps and the inexact-Newton stopping tests.
//!
//! `F` stacks, per subsystem, the Lagrangian gradient, the equality values and
//! `min(-h_i, μ_i)`, followed by the coupling residual `Σ E_i x_i - c`. `F̃`
//! drops the `min` rows, so it is differentiable everywhere and its Jacobian
//! is block-arrowhead:
//!
//! ```text
//!   ∇F̃ = [ ∇F̃_1          Ē_1ᵀ ]      ∇F̃_i = [ H_i   ∇g_i  ∇h_i ]
//!        [       ⋱       ⋮    ]             [ ∇g_iᵀ  0     0   ]
//!        [         ∇F̃_S  Ē_Sᵀ ]
//!        [ Ẽ_1 … Ẽ_S     0    ]      Ẽ_i = [E_i 0 0],  Ē_i = [E_i 0]
//! ```
//!
//! All norms are `‖·‖∞`. With coupling feasibility the last block row of
//! `F̃ + ∇F̃ d` vanishes and the test decomposes into per-subsystem checks.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{self, norm_inf};
use crate::model::{BlockSensitivity, ModelError, PartitionedNlp, PrimalDualPoint, SensitivityPack};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResidualError {
    #[error("forcing term eta = {0} outside (0, 1)")]
    EtaOutOfRange(f64),
    #[error("coupling residual {0:e} of the linearized step is not zero")]
    CouplingInfeasible(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlocks {
    pub stationarity: Vec<DVector<f64>>,
    pub equality: Vec<DVector<f64>>,
    pub complementarity: Vec<DVector<f64>>,
    pub coupling: DVector<f64>,
}

impl ResidualBlocks {
    /// `‖F‖∞`.
    pub fn norm_inf(&self) -> f64 {
        self.tilde_norm_inf()
            .max(linalg::blocks_norm_inf(&self.complementarity))
    }

    /// `‖F̃‖∞`.
    pub fn tilde_norm_inf(&self) -> f64 {
        linalg::blocks_norm_inf(&self.stationarity)
            .max(linalg::blocks_norm_inf(&self.equality))
            .max(norm_inf(&self.coupling))
    }

    /// `‖F_i‖∞` of the local rows of subsystem `i`.
    pub fn local_norm_inf(&self, i: usize) -> f64 {
        self.local_tilde_norm_inf(i).max(norm_inf(&self.complementarity[i]))
    }

    pub fn local_tilde_norm_inf(&self, i: usize) -> f64 {
        norm_inf(&self.stationarity[i]).max(norm_inf(&self.equality[i]))
    }

    pub fn coupling_norm_inf(&self) -> f64 {
        norm_inf(&self.coupling)
    }

    /// Flattened `F` in block order.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut parts = Vec::new();
        for i in 0..self.stationarity.len() {
            parts.push(self.stationarity[i].clone());
            parts.push(self.equality[i].clone());
            parts.push(self.complementarity[i].clone());
        }
        parts.push(self.coupling.clone());
        linalg::concat(&parts)
    }

    /// Flattened `F̃` in block order.
    pub fn tilde_vector(&self) -> DVector<f64> {
        let mut parts = Vec::new();
        for i in 0..self.stationarity.len() {
            parts.push(self.stationarity[i].clone());
            parts.push(self.equality[i].clone());
        }
        parts.push(self.coupling.clone());
        linalg::concat(&parts)
    }
}

fn complementarity(h: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
    h.zip_map(mu, |hj, mj| (-hj).min(mj))
}

/// `∇f_i + ∇g_i ν_i + ∇h_i μ_i + γ_i`.
fn stationarity(b: &BlockSensitivity, nu: &DVector<f64>, mu: &DVector<f64>, gamma: &DVector<f64>) -> DVector<f64> {
    &b.grad_f + b.jac_eq.transpose() * nu + b.jac_ineq.transpose() * mu + gamma
}

/// Evaluates the full residual `F(p)`.
pub fn eval_f(problem: &PartitionedNlp, p: &PrimalDualPoint) -> Result<ResidualBlocks, ModelError> {
    p.check_dims(problem)?;
    let mut stat = Vec::with_capacity(problem.n_subsystems());
    let mut eq = Vec::with_capacity(problem.n_subsystems());
    let mut comp = Vec::with_capacity(problem.n_subsystems());
    for s in &problem.subsystems {
        let i = s.index;
        let f = &s.functions;
        let x = &p.x[i];
        let grad = f.gradient(x);
        let jg = f.eq_jacobian(x);
        let jh = f.ineq_jacobian(x);
        let g = f.eq_values(x);
        let h = f.ineq_values(x);
        let r = &grad + jg.transpose() * &p.nu[i] + jh.transpose() * &p.mu[i] + &p.gamma[i];
        for (component, ok) in [
            ("grad f_i", linalg::all_finite_vec(&grad)),
            ("jac g_i", linalg::all_finite_mat(&jg)),
            ("jac h_i", linalg::all_finite_mat(&jh)),
            ("g_i", linalg::all_finite_vec(&g)),
            ("h_i", linalg::all_finite_vec(&h)),
        ] {
            if !ok {
                return Err(ModelError::Evaluation { subsystem: i, component });
            }
        }
        comp.push(complementarity(&h, &p.mu[i]));
        stat.push(r);
        eq.push(g);
    }
    Ok(ResidualBlocks {
        stationarity: stat,
        equality: eq,
        complementarity: comp,
        coupling: problem.coupling_residual(&p.x),
    })
}

/// `F(p)` from sensitivities already evaluated at `p.x`.
pub fn eval_f_from_pack(problem: &PartitionedNlp, pack: &SensitivityPack, p: &PrimalDualPoint) -> ResidualBlocks {
    let mut out = ResidualBlocks {
        stationarity: Vec::new(),
        equality: Vec::new(),
        complementarity: Vec::new(),
        coupling: problem.coupling_residual(&p.x),
    };
    for b in &pack.blocks {
        let i = b.subsystem;
        out.stationarity.push(stationarity(b, &p.nu[i], &p.mu[i], &p.gamma[i]));
        out.equality.push(b.eq_values.clone());
        out.complementarity.push(complementarity(&b.ineq_values, &p.mu[i]));
    }
    out
}

/// Local piece of `F̃` and its Jacobian blocks for one subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalNewtonBlock {
    pub subsystem: usize,
    /// `col(∇_x L_i, g_i)`
    pub f_tilde: DVector<f64>,
    /// `∇F̃_i`, `(n_i + n_gi) x (n_i + n_gi + n_hi)`.
    pub jacobian: DMatrix<f64>,
    /// `Ẽ_i = [E_i 0 0]`
    pub e_tilde: DMatrix<f64>,
    /// `Ē_i = [E_i 0]`
    pub e_bar: DMatrix<f64>,
    pub n_vars: usize,
    pub n_eq: usize,
    pub n_ineq: usize,
}

impl LocalNewtonBlock {
    pub fn f_tilde_norm_inf(&self) -> f64 {
        norm_inf(&self.f_tilde)
    }
}

pub fn eval_ftilde_block(
    b: &BlockSensitivity,
    coupling: &DMatrix<f64>,
    nu: &DVector<f64>,
    mu: &DVector<f64>,
    gamma: &DVector<f64>,
) -> LocalNewtonBlock {
    let n = b.grad_f.len();
    let ng = b.eq_values.len();
    let nh = b.ineq_values.len();
    let mut f_tilde = DVector::zeros(n + ng);
    f_tilde.rows_mut(0, n).copy_from(&stationarity(b, nu, mu, gamma));
    f_tilde.rows_mut(n, ng).copy_from(&b.eq_values);
    let mut jacobian = DMatrix::zeros(n + ng, n + ng + nh);
    jacobian.view_mut((0, 0), (n, n)).copy_from(&b.hessian);
    jacobian.view_mut((0, n), (n, ng)).copy_from(&b.jac_eq.transpose());
    jacobian.view_mut((0, n + ng), (n, nh)).copy_from(&b.jac_ineq.transpose());
    jacobian.view_mut((n, 0), (ng, n)).copy_from(&b.jac_eq);
    let n_c = coupling.nrows();
    let mut e_tilde = DMatrix::zeros(n_c, n + ng + nh);
    e_tilde.view_mut((0, 0), (n_c, n)).copy_from(coupling);
    let mut e_bar = DMatrix::zeros(n_c, n + ng);
    e_bar.view_mut((0, 0), (n_c, n)).copy_from(coupling);
    LocalNewtonBlock {
        subsystem: b.subsystem,
        f_tilde,
        jacobian,
        e_tilde,
        e_bar,
        n_vars: n,
        n_eq: ng,
        n_ineq: nh,
    }
}

/// `F̃_i`, `∇F̃_i`, `Ẽ_i`, `Ē_i` for every subsystem.
pub fn eval_ftilde_blocks(problem: &PartitionedNlp, pack: &SensitivityPack, p: &PrimalDualPoint) -> Vec<LocalNewtonBlock> {
    pack.blocks
        .iter()
        .map(|b| {
            let i = b.subsystem;
            eval_ftilde_block(b, &problem.subsystems[i].coupling, &p.nu[i], &p.mu[i], &p.gamma[i])
        })
        .collect()
}

/// `d_i = col(s_i, Δν_i, Δμ_i)` plus the coupling part `Δγ_i = E_iᵀ Δλ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDirection {
    pub s: DVector<f64>,
    pub dnu: DVector<f64>,
    pub dmu: DVector<f64>,
    pub dgamma: DVector<f64>,
}

impl LocalDirection {
    /// Direction from a candidate `(s_i, ν_i^QP, μ_i^QP, γ_i^QP)` relative to `p`.
    pub fn from_candidate(
        p: &PrimalDualPoint,
        i: usize,
        s: &DVector<f64>,
        nu_qp: &DVector<f64>,
        mu_qp: &DVector<f64>,
        gamma_qp: &DVector<f64>,
    ) -> Self {
        LocalDirection {
            s: s.clone(),
            dnu: nu_qp - &p.nu[i],
            dmu: mu_qp - &p.mu[i],
            dgamma: gamma_qp - &p.gamma[i],
        }
    }

    pub fn zeros(n: usize, ng: usize, nh: usize) -> Self {
        LocalDirection {
            s: DVector::zeros(n),
            dnu: DVector::zeros(ng),
            dmu: DVector::zeros(nh),
            dgamma: DVector::zeros(n),
        }
    }

    pub fn stacked(&self) -> DVector<f64> {
        linalg::concat(&[self.s.clone(), self.dnu.clone(), self.dmu.clone()])
    }
}

/// Both sides of the local test `‖F̃_i + ∇F̃_i d_i‖∞ ≤ η ‖F̃_i‖∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriterionValue {
    pub lhs: f64,
    pub f_tilde_norm: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

/// `F̃_i + ∇F̃_i d_i + col(Δγ_i, 0)`.
pub fn local_linearized_residual(block: &LocalNewtonBlock, d: &LocalDirection) -> DVector<f64> {
    let mut r = &block.f_tilde + &block.jacobian * d.stacked();
    let mut top = r.rows_mut(0, block.n_vars);
    top += &d.dgamma;
    r
}

pub fn local_modified_criterion(block: &LocalNewtonBlock, d: &LocalDirection, eta: f64) -> Result<CriterionValue, ResidualError> {
    local_criterion_with_reference(block, d, eta, block.f_tilde_norm_inf())
}

/// Local test against an externally supplied reference norm, normally the
/// global `‖F̃‖∞ = max_i ‖F̃_i‖∞`. Under coupling feasibility the conjunction
/// over all subsystems is then exactly the monolithic test.
pub fn local_criterion_with_reference(
    block: &LocalNewtonBlock,
    d: &LocalDirection,
    eta: f64,
    reference: f64,
) -> Result<CriterionValue, ResidualError> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(ResidualError::EtaOutOfRange(eta));
    }
    let lhs = norm_inf(&local_linearized_residual(block, d));
    let rhs = eta * reference;
    Ok(CriterionValue {
        lhs,
        f_tilde_norm: reference,
        rhs,
        satisfied: lhs <= rhs,
    })
}

/// Coupling row of the linearized residual, `Σ E_i (x_i + s_i) - c`.
pub fn linearized_coupling(problem: &PartitionedNlp, p: &PrimalDualPoint, s: &[DVector<f64>]) -> DVector<f64> {
    let stepped: Vec<DVector<f64>> = p.x.iter().zip(s).map(|(x, si)| x + si).collect();
    problem.coupling_residual(&stepped)
}

/// Fails when the coupling row of `F̃ + ∇F̃ d` is not (numerically) zero.
pub fn assert_coupling_feasible(problem: &PartitionedNlp, p: &PrimalDualPoint, s: &[DVector<f64>]) -> Result<(), ResidualError> {
    let r = norm_inf(&linearized_coupling(problem, p, s));
    if r >= 1e-10 {
        Err(ResidualError::CouplingInfeasible(r))
    } else {
        Ok(())
    }
}

/// Monolithic `∇F̃`: rows `[(stat_i, eq_i)_i, coupling]`, columns
/// `[(x_i, ν_i, μ_i)_i, λ]`.
pub fn assemble_global_jacobian(problem: &PartitionedNlp, blocks: &[LocalNewtonBlock]) -> DMatrix<f64> {
    let n_c = problem.n_coupling();
    let rows: usize = blocks.iter().map(|b| b.n_vars + b.n_eq).sum::<usize>() + n_c;
    let cols: usize = blocks.iter().map(|b| b.n_vars + b.n_eq + b.n_ineq).sum::<usize>() + n_c;
    let mut jac = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        let (br, bc) = b.jacobian.shape();
        jac.view_mut((r, c), (br, bc)).copy_from(&b.jacobian);
        jac.view_mut((r, cols - n_c), (br, n_c)).copy_from(&b.e_bar.transpose());
        jac.view_mut((rows - n_c, c), (n_c, bc)).copy_from(&b.e_tilde);
        r += br;
        c += bc;
    }
    jac
}

/// Monolithic `‖F̃ + ∇F̃ d‖∞` with an explicit `Δλ`.
pub fn global_modified_lhs(
    problem: &PartitionedNlp,
    blocks: &[LocalNewtonBlock],
    p: &PrimalDualPoint,
    directions: &[LocalDirection],
    dlambda: &DVector<f64>,
) -> f64 {
    let jac = assemble_global_jacobian(problem, blocks);
    let mut f_parts: Vec<DVector<f64>> = blocks.iter().map(|b| b.f_tilde.clone()).collect();
    f_parts.push(problem.coupling_residual(&p.x));
    let mut d_parts: Vec<DVector<f64>> = directions.iter().map(|d| d.stacked()).collect();
    d_parts.push(dlambda.clone());
    let v = linalg::concat(&f_parts) + jac * linalg::concat(&d_parts);
    norm_inf(&v)
}

/// Outcome of checking that the modified test implies the original one.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicationReport {
    /// `(subsystem, row)` where the candidate step disagrees with the supplied active set.
    pub active_set_violations: Vec<(usize, usize)>,
    pub modified_lhs: f64,
    pub ftilde_norm: f64,
    pub original_lhs: f64,
    pub f_norm: f64,
    pub eta: f64,
    pub modified_pass: bool,
    pub original_pass: bool,
}

impl ImplicationReport {
    pub fn active_set_consistent(&self) -> bool {
        self.active_set_violations.is_empty()
    }

    /// `Some(modified ⇒ original)` when the active-set premise holds, else `None`.
    pub fn implication(&self) -> Option<bool> {
        self.active_set_consistent()
            .then_some(!self.modified_pass || self.original_pass)
    }

    pub fn subset_norm_holds(&self) -> bool {
        self.ftilde_norm <= self.f_norm
    }
}

/// A candidate QP solution `(s, ν^QP, μ^QP, γ^QP)` of the coupled subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCandidate {
    pub s: Vec<DVector<f64>>,
    pub nu: Vec<DVector<f64>>,
    pub mu: Vec<DVector<f64>>,
    pub gamma: Vec<DVector<f64>>,
}

/// Evaluates both stopping tests at `p` for a candidate step, selecting the
/// derivative of each `min(-h_j, μ_j)` row from `active[i]` (`-h` row when
/// `j` is active, `μ` row otherwise).
pub fn check_criterion_implication(
    problem: &PartitionedNlp,
    p: &PrimalDualPoint,
    pack: &SensitivityPack,
    candidate: &StepCandidate,
    active: &[Vec<usize>],
    eta: f64,
    tol: f64,
) -> Result<ImplicationReport, ResidualError> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(ResidualError::EtaOutOfRange(eta));
    }
    let f = eval_f_from_pack(problem, pack, p);
    let blocks = eval_ftilde_blocks(problem, pack, p);
    let coupling = linalg::norm_inf(&linearized_coupling(problem, p, &candidate.s));
    let mut modified_lhs = coupling;
    let mut original_lhs = coupling;
    let mut violations = Vec::new();
    for (b, block) in pack.blocks.iter().zip(&blocks) {
        let i = b.subsystem;
        let d = LocalDirection::from_candidate(p, i, &candidate.s[i], &candidate.nu[i], &candidate.mu[i], &candidate.gamma[i]);
        let local = norm_inf(&local_linearized_residual(block, &d));
        modified_lhs = modified_lhs.max(local);
        original_lhs = original_lhs.max(local);
        let linearized_h = &b.ineq_values + &b.jac_ineq * &candidate.s[i];
        for j in 0..b.ineq_values.len() {
            let is_active = active[i].contains(&j);
            let row = if is_active {
                // d/dx of -h_j applied to s
                -linearized_h[j]
            } else {
                // μ_j + Δμ_j
                candidate.mu[i][j]
            };
            if row.abs() > tol {
                violations.push((i, j));
            }
            original_lhs = original_lhs.max(row.abs());
        }
    }
    let ftilde_norm = f.tilde_norm_inf();
    let f_norm = f.norm_inf();
    Ok(ImplicationReport {
        active_set_violations: violations,
        modified_lhs,
        ftilde_norm,
        original_lhs,
        f_norm,
        eta,
        modified_pass: modified_lhs <= eta * ftilde_norm,
        original_pass: original_lhs <= eta * f_norm,
    })
}
