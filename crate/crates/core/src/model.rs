//! Partitioned NLP model: subsystems with private objectives and constraints,
//! linked by linear coupling `Σ E_i x_i = c`.
//!
//! Subsystems provide analytic first derivatives and the Hessian of their
//! local Lagrangian `f_i + ν_iᵀ g_i + μ_iᵀ h_i`. The coupling term `λᵀ E_i x_i`
//! is linear in `x_i`, so it never enters the Hessian.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{self, null_space};

/// Regularization parameter for reduced Hessians.
pub const DEFAULT_DELTA: f64 = 1e-4;

/// Relative asymmetry above which a Hessian triggers a warning.
pub const ASYMMETRY_WARN: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("subsystem {subsystem}: non-finite value in {component}")]
    Evaluation {
        subsystem: usize,
        component: &'static str,
    },
    #[error("subsystem {subsystem}: {component} has shape {got:?}, expected {expected:?}")]
    Dimension {
        subsystem: usize,
        component: &'static str,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("equality Jacobian of subsystem {subsystem} is rank deficient (rank {rank} < {rows}); LICQ violated")]
    RankDeficient {
        subsystem: usize,
        rank: usize,
        rows: usize,
    },
    #[error("invalid problem: {0}")]
    Invalid(String),
}

/// Local functions of one subsystem.
///
/// Jacobians are returned row-wise: `eq_jacobian(x)` is `∇g(x)ᵀ` with one row
/// per constraint.
pub trait SubsystemFunctions: Send + Sync + fmt::Debug {
    fn n_vars(&self) -> usize;
    fn n_eq(&self) -> usize {
        0
    }
    fn n_ineq(&self) -> usize {
        0
    }

    fn objective(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;

    fn eq_values(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn eq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, self.n_vars())
    }
    fn ineq_values(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn ineq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, self.n_vars())
    }

    /// Hessian of `f + νᵀg + μᵀh` with respect to `x`.
    fn lagrangian_hessian(&self, x: &DVector<f64>, nu: &DVector<f64>, mu: &DVector<f64>)
        -> DMatrix<f64>;
}

#[derive(Debug, Clone)]
pub struct SubsystemModel {
    pub index: usize,
    pub functions: Arc<dyn SubsystemFunctions>,
    /// `E_i`, `n_c x n_i`.
    pub coupling: DMatrix<f64>,
}

impl SubsystemModel {
    pub fn n_vars(&self) -> usize {
        self.functions.n_vars()
    }
    pub fn n_eq(&self) -> usize {
        self.functions.n_eq()
    }
    pub fn n_ineq(&self) -> usize {
        self.functions.n_ineq()
    }
}

/// A coordinate `x_i[coord]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarRef {
    pub subsystem: usize,
    pub coord: usize,
}

/// One coupling row `x_owner - x_copier = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsensusPair {
    pub row: usize,
    pub owner: VarRef,
    pub copier: VarRef,
}

/// An original variable together with all of its copies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusGroup {
    pub owner: VarRef,
    /// `(row, copier)` in row order.
    pub copies: Vec<(usize, VarRef)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusMap {
    pub pairs: Vec<ConsensusPair>,
    pub groups: Vec<ConsensusGroup>,
}

#[derive(Debug, Clone)]
pub struct PartitionedNlp {
    pub subsystems: Vec<SubsystemModel>,
    pub c: DVector<f64>,
    pub consensus: Option<ConsensusMap>,
}

impl PartitionedNlp {
    /// Builds a problem from `(functions, E_i)` pairs and detects consensus form.
    pub fn new(
        parts: Vec<(Arc<dyn SubsystemFunctions>, DMatrix<f64>)>,
        c: DVector<f64>,
    ) -> Result<Self, ModelError> {
        let n_c = c.len();
        let mut subsystems = Vec::with_capacity(parts.len());
        for (index, (functions, coupling)) in parts.into_iter().enumerate() {
            let expected = (n_c, functions.n_vars());
            if coupling.shape() != expected {
                return Err(ModelError::Dimension {
                    subsystem: index,
                    component: "E_i",
                    got: coupling.shape(),
                    expected,
                });
            }
            subsystems.push(SubsystemModel {
                index,
                functions,
                coupling,
            });
        }
        if subsystems.is_empty() {
            return Err(ModelError::Invalid("no subsystems".into()));
        }
        let mut problem = PartitionedNlp {
            subsystems,
            c,
            consensus: None,
        };
        problem.consensus = detect_consensus(&problem);
        Ok(problem)
    }

    pub fn n_subsystems(&self) -> usize {
        self.subsystems.len()
    }

    pub fn n_coupling(&self) -> usize {
        self.c.len()
    }

    pub fn n_vars_total(&self) -> usize {
        self.subsystems.iter().map(|s| s.n_vars()).sum()
    }

    pub fn var_dims(&self) -> Vec<usize> {
        self.subsystems.iter().map(|s| s.n_vars()).collect()
    }

    pub fn eq_dims(&self) -> Vec<usize> {
        self.subsystems.iter().map(|s| s.n_eq()).collect()
    }

    pub fn ineq_dims(&self) -> Vec<usize> {
        self.subsystems.iter().map(|s| s.n_ineq()).collect()
    }

    pub fn is_consensus(&self) -> bool {
        self.consensus.is_some()
    }

    /// `[E_1 ... E_S]`.
    pub fn stacked_coupling(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.n_coupling(), self.n_vars_total());
        let mut col = 0;
        for s in &self.subsystems {
            e.view_mut((0, col), s.coupling.shape()).copy_from(&s.coupling);
            col += s.n_vars();
        }
        e
    }

    /// `Σ E_i x_i - c`. Summed in subsystem order.
    pub fn coupling_residual(&self, x: &[DVector<f64>]) -> DVector<f64> {
        let mut r = -self.c.clone();
        for (s, xi) in self.subsystems.iter().zip(x) {
            r += &s.coupling * xi;
        }
        r
    }

    pub fn objective(&self, x: &[DVector<f64>]) -> f64 {
        self.subsystems
            .iter()
            .zip(x)
            .map(|(s, xi)| s.functions.objective(xi))
            .sum()
    }

    /// Coupling multiplier contributions `γ_i = E_iᵀ λ`.
    pub fn gamma_from_lambda(&self, lambda: &DVector<f64>) -> Vec<DVector<f64>> {
        self.subsystems
            .iter()
            .map(|s| s.coupling.transpose() * lambda)
            .collect()
    }
}

/// Recognises coupling rows of the form `x_owner - x_copier = 0`.
///
/// Every row needs exactly one `+1` and one `-1` in different subsystems with
/// `c_r = 0`. A copied coordinate may appear in one row only and an owner
/// coordinate never appears as a copy, so the rows form disjoint stars.
fn detect_consensus(problem: &PartitionedNlp) -> Option<ConsensusMap> {
    let n_c = problem.n_coupling();
    if n_c == 0 {
        return None;
    }
    let mut pairs = Vec::with_capacity(n_c);
    for row in 0..n_c {
        if problem.c[row] != 0.0 {
            return None;
        }
        let mut plus = None;
        let mut minus = None;
        for s in &problem.subsystems {
            for coord in 0..s.n_vars() {
                let v = s.coupling[(row, coord)];
                let at = VarRef {
                    subsystem: s.index,
                    coord,
                };
                if v == 0.0 {
                    continue;
                } else if v == 1.0 && plus.is_none() {
                    plus = Some(at);
                } else if v == -1.0 && minus.is_none() {
                    minus = Some(at);
                } else {
                    return None;
                }
            }
        }
        let (owner, copier) = (plus?, minus?);
        if owner.subsystem == copier.subsystem {
            return None;
        }
        pairs.push(ConsensusPair { row, owner, copier });
    }
    let mut copier_seen = BTreeMap::new();
    for p in &pairs {
        if copier_seen.insert(p.copier, p.row).is_some() {
            return None;
        }
    }
    if pairs.iter().any(|p| copier_seen.contains_key(&p.owner)) {
        return None;
    }
    let mut by_owner: BTreeMap<VarRef, Vec<(usize, VarRef)>> = BTreeMap::new();
    let mut owner_order = Vec::new();
    for p in &pairs {
        let entry = by_owner.entry(p.owner).or_default();
        if entry.is_empty() {
            owner_order.push(p.owner);
        }
        entry.push((p.row, p.copier));
    }
    let groups = owner_order
        .into_iter()
        .map(|owner| ConsensusGroup {
            owner,
            copies: by_owner.remove(&owner).unwrap_or_default(),
        })
        .collect();
    Some(ConsensusMap { pairs, groups })
}

/// Primal-dual iterate. The coupling multiplier is kept per subsystem as
/// `γ_i = E_iᵀ λ`; `λ` itself is never assembled.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualPoint {
    pub x: Vec<DVector<f64>>,
    pub nu: Vec<DVector<f64>>,
    pub mu: Vec<DVector<f64>>,
    pub gamma: Vec<DVector<f64>>,
}

impl PrimalDualPoint {
    /// Zero multipliers around the given primal blocks.
    pub fn from_primal(problem: &PartitionedNlp, x: Vec<DVector<f64>>) -> Self {
        let nu = problem.eq_dims().into_iter().map(DVector::zeros).collect();
        let mu = problem.ineq_dims().into_iter().map(DVector::zeros).collect();
        let gamma = problem.var_dims().into_iter().map(DVector::zeros).collect();
        PrimalDualPoint { x, nu, mu, gamma }
    }

    pub fn zeros(problem: &PartitionedNlp) -> Self {
        let x = problem.var_dims().into_iter().map(DVector::zeros).collect();
        Self::from_primal(problem, x)
    }

    pub fn check_dims(&self, problem: &PartitionedNlp) -> Result<(), ModelError> {
        for (i, s) in problem.subsystems.iter().enumerate() {
            let checks = [
                ("x_i", self.x.get(i).map(|v| v.len()), s.n_vars()),
                ("nu_i", self.nu.get(i).map(|v| v.len()), s.n_eq()),
                ("mu_i", self.mu.get(i).map(|v| v.len()), s.n_ineq()),
                ("gamma_i", self.gamma.get(i).map(|v| v.len()), s.n_vars()),
            ];
            for (component, got, expected) in checks {
                if got != Some(expected) {
                    return Err(ModelError::Dimension {
                        subsystem: i,
                        component,
                        got: (got.unwrap_or(0), 1),
                        expected: (expected, 1),
                    });
                }
            }
        }
        if self.x.len() != problem.n_subsystems() {
            return Err(ModelError::Invalid("block count mismatch".into()));
        }
        Ok(())
    }

    /// `col(x, ν, μ, γ)`.
    pub fn flatten(&self) -> DVector<f64> {
        let all: Vec<DVector<f64>> = self
            .x
            .iter()
            .chain(&self.nu)
            .chain(&self.mu)
            .chain(&self.gamma)
            .cloned()
            .collect();
        linalg::concat(&all)
    }

    pub fn flat_primal(&self) -> DVector<f64> {
        linalg::concat(&self.x)
    }

    /// `‖self - other‖∞` over all primal and dual blocks.
    pub fn distance_inf(&self, other: &PrimalDualPoint) -> f64 {
        linalg::norm_inf(&(self.flatten() - other.flatten()))
    }

    pub fn primal_distance_inf(&self, other: &PrimalDualPoint) -> f64 {
        linalg::norm_inf(&(self.flat_primal() - other.flat_primal()))
    }
}

/// Derivatives of one subsystem at the current linearization point.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSensitivity {
    pub subsystem: usize,
    pub grad_f: DVector<f64>,
    /// `∇g_i(x)ᵀ`
    pub jac_eq: DMatrix<f64>,
    /// `∇h_i(x)ᵀ`
    pub jac_ineq: DMatrix<f64>,
    pub hessian: DMatrix<f64>,
    pub eq_values: DVector<f64>,
    pub ineq_values: DVector<f64>,
    pub regularized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityPack {
    pub blocks: Vec<BlockSensitivity>,
}

fn check_shape(
    subsystem: usize,
    component: &'static str,
    got: (usize, usize),
    expected: (usize, usize),
) -> Result<(), ModelError> {
    if got != expected {
        return Err(ModelError::Dimension {
            subsystem,
            component,
            got,
            expected,
        });
    }
    Ok(())
}

fn finite_vec(subsystem: usize, component: &'static str, v: &DVector<f64>) -> Result<(), ModelError> {
    if linalg::all_finite_vec(v) {
        Ok(())
    } else {
        Err(ModelError::Evaluation {
            subsystem,
            component,
        })
    }
}

fn finite_mat(subsystem: usize, component: &'static str, m: &DMatrix<f64>) -> Result<(), ModelError> {
    if linalg::all_finite_mat(m) {
        Ok(())
    } else {
        Err(ModelError::Evaluation {
            subsystem,
            component,
        })
    }
}

/// Exact derivatives of subsystem `model` at `(x_i, ν_i, μ_i)`. No regularization.
pub fn evaluate_sensitivities(
    model: &SubsystemModel,
    x: &DVector<f64>,
    nu: &DVector<f64>,
    mu: &DVector<f64>,
) -> Result<BlockSensitivity, ModelError> {
    let i = model.index;
    let f = &model.functions;
    let (n, ng, nh) = (f.n_vars(), f.n_eq(), f.n_ineq());
    check_shape(i, "x_i", (x.len(), 1), (n, 1))?;
    check_shape(i, "nu_i", (nu.len(), 1), (ng, 1))?;
    check_shape(i, "mu_i", (mu.len(), 1), (nh, 1))?;

    let objective = f.objective(x);
    if !objective.is_finite() {
        return Err(ModelError::Evaluation {
            subsystem: i,
            component: "f_i",
        });
    }
    let grad_f = f.gradient(x);
    check_shape(i, "grad f_i", (grad_f.len(), 1), (n, 1))?;
    finite_vec(i, "grad f_i", &grad_f)?;
    let eq_values = f.eq_values(x);
    check_shape(i, "g_i", (eq_values.len(), 1), (ng, 1))?;
    finite_vec(i, "g_i", &eq_values)?;
    let jac_eq = f.eq_jacobian(x);
    check_shape(i, "jac g_i", jac_eq.shape(), (ng, n))?;
    finite_mat(i, "jac g_i", &jac_eq)?;
    let ineq_values = f.ineq_values(x);
    check_shape(i, "h_i", (ineq_values.len(), 1), (nh, 1))?;
    finite_vec(i, "h_i", &ineq_values)?;
    let jac_ineq = f.ineq_jacobian(x);
    check_shape(i, "jac h_i", jac_ineq.shape(), (nh, n))?;
    finite_mat(i, "jac h_i", &jac_ineq)?;
    let raw = f.lagrangian_hessian(x, nu, mu);
    check_shape(i, "H_i", raw.shape(), (n, n))?;
    finite_mat(i, "H_i", &raw)?;
    let asym = linalg::relative_asymmetry(&raw);
    if asym > ASYMMETRY_WARN {
        log::warn!("subsystem {i}: Hessian asymmetry {asym:.3e} exceeds {ASYMMETRY_WARN:e}; symmetrizing");
    }
    Ok(BlockSensitivity {
        subsystem: i,
        grad_f,
        jac_eq,
        jac_ineq,
        hessian: linalg::symmetrize(&raw),
        eq_values,
        ineq_values,
        regularized: false,
    })
}

/// Sensitivities of every subsystem at `p`, optionally in parallel.
pub fn evaluate_all(
    problem: &PartitionedNlp,
    p: &PrimalDualPoint,
    parallel: bool,
) -> Result<SensitivityPack, ModelError> {
    let eval = |s: &SubsystemModel| {
        let i = s.index;
        evaluate_sensitivities(s, &p.x[i], &p.nu[i], &p.mu[i])
    };
    let blocks: Result<Vec<_>, _> = if parallel {
        problem.subsystems.par_iter().map(eval).collect()
    } else {
        problem.subsystems.iter().map(eval).collect()
    };
    Ok(SensitivityPack { blocks: blocks? })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regularization {
    pub hessian: DMatrix<f64>,
    pub shifted: bool,
}

/// Shifts the eigenvalues of the reduced Hessian `Zᵀ H Z` up to at least
/// `delta`, where `Z` is an orthonormal basis of `null(G)`, and lifts the
/// correction back: `H' = H + Z V (Λ' - Λ) Vᵀ Zᵀ`.
pub fn regularize_reduced_hessian(
    h: &DMatrix<f64>,
    g: &DMatrix<f64>,
    delta: f64,
) -> Result<Regularization, ModelError> {
    regularize_block(usize::MAX, h, g, delta)
}

fn regularize_block(
    subsystem: usize,
    h: &DMatrix<f64>,
    g: &DMatrix<f64>,
    delta: f64,
) -> Result<Regularization, ModelError> {
    let ns = null_space(g);
    if !ns.full_row_rank(g.nrows()) {
        return Err(ModelError::RankDeficient {
            subsystem,
            rank: ns.rank,
            rows: g.nrows(),
        });
    }
    let h = linalg::symmetrize(h);
    let z = &ns.basis;
    if z.ncols() == 0 {
        return Ok(Regularization {
            hessian: h,
            shifted: false,
        });
    }
    let reduced = linalg::symmetrize(&(z.transpose() * &h * z));
    let (values, vectors) = linalg::sorted_symmetric_eigen(&reduced);
    // Slack so that a second application is a no-op.
    let threshold = delta * (1.0 - 1e-8);
    if values.iter().all(|&v| v >= threshold) {
        return Ok(Regularization {
            hessian: h,
            shifted: false,
        });
    }
    let shift = DVector::from_iterator(values.len(), values.iter().map(|&v| (delta - v).max(0.0)));
    let zv = z * vectors;
    let correction = &zv * DMatrix::from_diagonal(&shift) * zv.transpose();
    Ok(Regularization {
        hessian: linalg::symmetrize(&(h + correction)),
        shifted: true,
    })
}

impl BlockSensitivity {
    /// Applies reduced-Hessian regularization in place.
    pub fn regularize(&mut self, delta: f64) -> Result<(), ModelError> {
        let reg = regularize_block(self.subsystem, &self.hessian, &self.jac_eq, delta)?;
        self.hessian = reg.hessian;
        self.regularized = reg.shifted;
        Ok(())
    }
}

impl SensitivityPack {
    pub fn regularize(&mut self, delta: f64) -> Result<(), ModelError> {
        self.blocks.iter_mut().try_for_each(|b| b.regularize(delta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug)]
    struct HalfNorm;
    impl SubsystemFunctions for HalfNorm {
        fn n_vars(&self) -> usize {
            2
        }
        fn objective(&self, x: &DVector<f64>) -> f64 {
            0.5 * x.norm_squared()
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            x.clone()
        }
        fn lagrangian_hessian(&self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::identity(2, 2)
        }
    }

    #[derive(Debug)]
    struct Circle;
    impl SubsystemFunctions for Circle {
        fn n_vars(&self) -> usize {
            2
        }
        fn n_eq(&self) -> usize {
            1
        }
        fn objective(&self, x: &DVector<f64>) -> f64 {
            0.5 * x.norm_squared()
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            x.clone()
        }
        fn eq_values(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::from_element(1, x.norm_squared() - 1.0)
        }
        fn eq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_row_slice(1, 2, &[2.0 * x[0], 2.0 * x[1]])
        }
        fn lagrangian_hessian(&self, _: &DVector<f64>, nu: &DVector<f64>, _: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::identity(2, 2) * (1.0 + 2.0 * nu[0])
        }
    }

    #[derive(Debug)]
    struct Broken;
    impl SubsystemFunctions for Broken {
        fn n_vars(&self) -> usize {
            1
        }
        fn n_eq(&self) -> usize {
            1
        }
        fn objective(&self, _: &DVector<f64>) -> f64 {
            0.0
        }
        fn gradient(&self, _: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(1)
        }
        fn eq_values(&self, _: &DVector<f64>) -> DVector<f64> {
            DVector::from_element(1, f64::NAN)
        }
        fn eq_jacobian(&self, _: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(1, 1)
        }
        fn lagrangian_hessian(&self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(1, 1)
        }
    }

    fn model(f: Arc<dyn SubsystemFunctions>) -> SubsystemModel {
        let n = f.n_vars();
        SubsystemModel {
            index: 0,
            functions: f,
            coupling: DMatrix::zeros(0, n),
        }
    }

    #[test]
    fn quadratic_identity_sensitivities() {
        let m = model(Arc::new(HalfNorm));
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let pack = evaluate_sensitivities(&m, &x, &DVector::zeros(0), &DVector::zeros(0)).unwrap();
        assert_eq!(pack.grad_f, x);
        assert_eq!(pack.hessian, DMatrix::identity(2, 2));
        assert!(!pack.regularized);
    }

    #[test]
    fn equality_hessian_contribution() {
        let m = model(Arc::new(Circle));
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let nu = DVector::from_element(1, 3.0);
        let pack = evaluate_sensitivities(&m, &x, &nu, &DVector::zeros(0)).unwrap();
        assert_eq!(pack.jac_eq, DMatrix::from_row_slice(1, 2, &[2.0, 0.0]));
        // ∇²f = I plus ν·2I = 6I.
        assert_eq!(pack.hessian, DMatrix::identity(2, 2) * 7.0);
    }

    #[test]
    fn nan_output_names_subsystem_and_component() {
        let m = model(Arc::new(Broken));
        let err = evaluate_sensitivities(&m, &DVector::zeros(1), &DVector::zeros(1), &DVector::zeros(0))
            .unwrap_err();
        assert_eq!(
            err,
            ModelError::Evaluation {
                subsystem: 0,
                component: "g_i"
            }
        );
    }

    #[test]
    fn regularization_keeps_positive_definite_reduced_hessian() {
        let h = DMatrix::identity(2, 2);
        let g = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let reg = regularize_reduced_hessian(&h, &g, 1e-4).unwrap();
        assert!(!reg.shifted);
        assert_eq!(reg.hessian, h);
    }

    #[test]
    fn regularization_shifts_negative_curvature_to_delta() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let g = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let reg = regularize_reduced_hessian(&h, &g, 1e-4).unwrap();
        assert!(reg.shifted);
        // Null space of [1 0] is span(e2); reduced Hessian -1 becomes delta.
        assert!((reg.hessian[(1, 1)] - 1e-4).abs() < 1e-15);
        assert!((reg.hessian[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(reg.hessian[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn regularization_without_equalities_uses_full_space() {
        let h = DMatrix::zeros(2, 2);
        let g = DMatrix::zeros(0, 2);
        let reg = regularize_reduced_hessian(&h, &g, 1e-4).unwrap();
        assert!((reg.hessian - DMatrix::identity(2, 2) * 1e-4).amax() < 1e-18);
    }

    #[test]
    fn rank_deficient_equalities_are_rejected() {
        let h = DMatrix::identity(2, 2);
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            regularize_reduced_hessian(&h, &g, 1e-4),
            Err(ModelError::RankDeficient { rank: 1, rows: 2, .. })
        ));
    }

    #[test]
    fn consensus_detection() {
        let f: Arc<dyn SubsystemFunctions> = Arc::new(HalfNorm);
        let e1 = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let e2 = DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]);
        let p = PartitionedNlp::new(vec![(f.clone(), e1.clone()), (f.clone(), e2.clone())], DVector::zeros(1)).unwrap();
        let map = p.consensus.as_ref().unwrap();
        assert_eq!(map.pairs.len(), 1);
        assert_eq!(map.pairs[0].owner, VarRef { subsystem: 0, coord: 0 });
        assert_eq!(map.pairs[0].copier, VarRef { subsystem: 1, coord: 0 });

        let q = PartitionedNlp::new(vec![(f.clone(), e1.clone()), (f.clone(), e2 * 2.0)], DVector::zeros(1)).unwrap();
        assert!(q.consensus.is_none());
        let r = PartitionedNlp::new(
            vec![(f.clone(), e1), (f, DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]))],
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        assert!(r.consensus.is_none());
    }

    #[test]
    fn coupling_shape_is_validated() {
        let f: Arc<dyn SubsystemFunctions> = Arc::new(HalfNorm);
        let err = PartitionedNlp::new(vec![(f, DMatrix::zeros(2, 2))], DVector::zeros(1)).unwrap_err();
        assert!(matches!(err, ModelError::Dimension { component: "E_i", .. }));
    }
}
