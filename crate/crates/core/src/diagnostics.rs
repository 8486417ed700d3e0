//! Regularity diagnostics at a candidate KKT point: constraint qualification,
//! strict complementarity and reduced-Hessian curvature.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::linalg::{self, null_space};
use crate::model::{evaluate_all, ModelError, PartitionedNlp, PrimalDualPoint};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    /// Smallest singular value of `[blkdiag(∇g_iᵀ); blkdiag(∇h_{i,A}ᵀ); E]`.
    pub licq_sigma_min: f64,
    pub licq_ok: bool,
    /// Active inequality rows per subsystem (`|h_j| <= tol`).
    pub active_sets: Vec<Vec<usize>>,
    /// `min_j |h_j| + μ_j` over active rows; `+∞` without active rows.
    pub complementarity_margin: f64,
    /// `(subsystem, row)` with both `|h_j| < tol` and `μ_j < tol`.
    pub degenerate: Vec<(usize, usize)>,
    /// Per subsystem, smallest eigenvalue of `Zᵀ H Z` with `Z` spanning `null(∇g_iᵀ)`.
    pub reduced_hessian_min_eig: Vec<f64>,
    /// As above with `Z` also orthogonal to the active inequality gradients.
    pub active_reduced_hessian_min_eig: Vec<f64>,
}

impl AssumptionReport {
    pub fn strict_complementarity_ok(&self) -> bool {
        self.degenerate.is_empty() && self.complementarity_margin > 0.0
    }

    /// Second-order condition on the equality null space only.
    pub fn reduced_hessian_ok(&self) -> bool {
        self.reduced_hessian_min_eig.iter().all(|&v| v > 0.0)
    }

    /// Second-order condition with active inequality directions removed as well.
    pub fn active_reduced_hessian_ok(&self) -> bool {
        self.active_reduced_hessian_min_eig.iter().all(|&v| v > 0.0)
    }
}

fn reduced_min_eig(h: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let z = null_space(g).basis;
    if z.ncols() == 0 {
        return f64::INFINITY;
    }
    let (values, _) = linalg::sorted_symmetric_eigen(&linalg::symmetrize(&(z.transpose() * h * z)));
    values[0]
}

/// Never fails on regularity violations; those are reported as flags.
pub fn check_assumption_diagnostics(
    problem: &PartitionedNlp,
    p: &PrimalDualPoint,
    tol: f64,
) -> Result<AssumptionReport, ModelError> {
    let pack = evaluate_all(problem, p, false)?;
    let mut eq_blocks = Vec::new();
    let mut act_blocks = Vec::new();
    let mut active_sets = Vec::new();
    let mut margin = f64::INFINITY;
    let mut degenerate = Vec::new();
    let mut red = Vec::new();
    let mut red_act = Vec::new();
    for b in &pack.blocks {
        let i = b.subsystem;
        let active: Vec<usize> = (0..b.ineq_values.len())
            .filter(|&j| b.ineq_values[j].abs() <= tol)
            .collect();
        for &j in &active {
            let m = p.mu[i][j];
            margin = margin.min(b.ineq_values[j].abs() + m);
            if m < tol {
                degenerate.push((i, j));
            }
        }
        let n = b.grad_f.len();
        let mut ja = DMatrix::zeros(active.len(), n);
        for (r, &j) in active.iter().enumerate() {
            ja.set_row(r, &b.jac_ineq.row(j));
        }
        let stacked = if b.jac_eq.nrows() + ja.nrows() == 0 {
            DMatrix::zeros(0, n)
        } else {
            let mut s = DMatrix::zeros(b.jac_eq.nrows() + ja.nrows(), n);
            s.view_mut((0, 0), b.jac_eq.shape()).copy_from(&b.jac_eq);
            s.view_mut((b.jac_eq.nrows(), 0), ja.shape()).copy_from(&ja);
            s
        };
        red.push(reduced_min_eig(&b.hessian, &b.jac_eq));
        red_act.push(reduced_min_eig(&b.hessian, &stacked));
        eq_blocks.push(b.jac_eq.clone());
        act_blocks.push(ja);
        active_sets.push(active);
    }
    let eq_refs: Vec<&DMatrix<f64>> = eq_blocks.iter().collect();
    let act_refs: Vec<&DMatrix<f64>> = act_blocks.iter().collect();
    let geq = linalg::block_diag(&eq_refs);
    let gact = linalg::block_diag(&act_refs);
    let e = problem.stacked_coupling();
    let n = problem.n_vars_total();
    let rows = geq.nrows() + gact.nrows() + e.nrows();
    let mut jac = DMatrix::zeros(rows, n);
    jac.view_mut((0, 0), (geq.nrows(), n)).copy_from(&geq);
    jac.view_mut((geq.nrows(), 0), (gact.nrows(), n)).copy_from(&gact);
    jac.view_mut((geq.nrows() + gact.nrows(), 0), (e.nrows(), n)).copy_from(&e);
    let sigma = linalg::min_singular_value(&jac);
    Ok(AssumptionReport {
        licq_sigma_min: sigma,
        licq_ok: sigma > tol,
        active_sets,
        complementarity_margin: margin,
        degenerate,
        reduced_hessian_min_eig: red,
        active_reduced_hessian_min_eig: red_act,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SubsystemFunctions;
    use nalgebra::DVector;
    use std::sync::Arc;

    /// f = ½‖x‖², g = rows of `a` applied to x, h = x₀ - 0 <= 0.
    #[derive(Debug)]
    struct Toy {
        a: DMatrix<f64>,
    }
    impl SubsystemFunctions for Toy {
        fn n_vars(&self) -> usize {
            2
        }
        fn n_eq(&self) -> usize {
            self.a.nrows()
        }
        fn n_ineq(&self) -> usize {
            1
        }
        fn objective(&self, x: &DVector<f64>) -> f64 {
            0.5 * x.norm_squared()
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            x.clone()
        }
        fn eq_values(&self, x: &DVector<f64>) -> DVector<f64> {
            &self.a * x
        }
        fn eq_jacobian(&self, _: &DVector<f64>) -> DMatrix<f64> {
            self.a.clone()
        }
        fn ineq_values(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::from_element(1, x[0])
        }
        fn ineq_jacobian(&self, _: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0])
        }
        fn lagrangian_hessian(&self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::identity(2, 2)
        }
    }

    fn problem(a: DMatrix<f64>) -> PartitionedNlp {
        PartitionedNlp::new(vec![(Arc::new(Toy { a }), DMatrix::zeros(0, 2))], DVector::zeros(0)).unwrap()
    }

    #[test]
    fn weakly_active_constraint_is_flagged() {
        let p = problem(DMatrix::zeros(0, 2));
        let pt = PrimalDualPoint::zeros(&p);
        let r = check_assumption_diagnostics(&p, &pt, 1e-8).unwrap();
        assert_eq!(r.active_sets, vec![vec![0]]);
        assert_eq!(r.degenerate, vec![(0, 0)]);
        assert!(!r.strict_complementarity_ok());
        assert!(r.licq_ok);
    }

    #[test]
    fn duplicated_equality_row_breaks_licq() {
        let p = problem(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]));
        let pt = PrimalDualPoint::zeros(&p);
        let r = check_assumption_diagnostics(&p, &pt, 1e-8).unwrap();
        assert!(r.licq_sigma_min < 1e-12);
        assert!(!r.licq_ok);
    }

    #[test]
    fn positive_multiplier_certifies_complementarity() {
        let p = problem(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
        let mut pt = PrimalDualPoint::zeros(&p);
        pt.mu[0][0] = 0.5;
        let r = check_assumption_diagnostics(&p, &pt, 1e-8).unwrap();
        assert!(r.strict_complementarity_ok());
        assert!((r.complementarity_margin - 0.5).abs() < 1e-15);
        assert!(r.reduced_hessian_ok());
        assert!((r.reduced_hessian_min_eig[0] - 1.0).abs() < 1e-12);
        // Null space of both rows is trivial.
        assert_eq!(r.active_reduced_hessian_min_eig[0], f64::INFINITY);
    }
}
