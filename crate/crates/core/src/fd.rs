//! Central finite differences and derivative consistency checks.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::model::{evaluate_sensitivities, ModelError, PartitionedNlp, PrimalDualPoint, SubsystemModel};
use crate::residuals::eval_ftilde_block;

pub const DEFAULT_STEP: f64 = 1e-6;

pub fn central_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        g[j] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Rows are outputs, columns inputs.
pub fn central_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    jac
}

/// `max|a − b| / max(1, max|b|)`; zero for empty operands.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (a - b).amax() / b.amax().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdReport {
    pub subsystem: usize,
    pub gradient: f64,
    pub eq_jacobian: f64,
    pub ineq_jacobian: f64,
    pub hessian: f64,
    pub ftilde_jacobian: f64,
}

impl FdReport {
    pub fn max(&self) -> f64 {
        [self.gradient, self.eq_jacobian, self.ineq_jacobian, self.hessian, self.ftilde_jacobian]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

fn col(v: DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    DMatrix::from_column_slice(n, 1, v.as_slice())
}

/// Compares every analytic derivative of `model` with central differences.
/// The `∇F̃_i` check differentiates `F̃_i(x, ν, μ)` at fixed `γ_i`.
pub fn check_subsystem(
    model: &SubsystemModel,
    x: &DVector<f64>,
    nu: &DVector<f64>,
    mu: &DVector<f64>,
    gamma: &DVector<f64>,
    h: f64,
) -> Result<FdReport, ModelError> {
    let f = &model.functions;
    let b = evaluate_sensitivities(model, x, nu, mu)?;
    let fd_grad = central_gradient(|y| f.objective(y), x, h);
    let fd_eq = central_jacobian(|y| f.eq_values(y), x, h);
    let fd_ineq = central_jacobian(|y| f.ineq_values(y), x, h);
    let grad_l = |y: &DVector<f64>| f.gradient(y) + f.eq_jacobian(y).tr_mul(nu) + f.ineq_jacobian(y).tr_mul(mu);
    let fd_hess = central_jacobian(grad_l, x, h);

    let (n, ng, nh) = (x.len(), nu.len(), mu.len());
    let block = eval_ftilde_block(&b, &model.coupling, nu, mu, gamma);
    let z0 = crate::linalg::concat(&[x.clone(), nu.clone(), mu.clone()]);
    let ftilde = |z: &DVector<f64>| -> DVector<f64> {
        let (y, l, m) = (z.rows(0, n).into_owned(), z.rows(n, ng).into_owned(), z.rows(n + ng, nh).into_owned());
        let stat = f.gradient(&y) + f.eq_jacobian(&y).tr_mul(&l) + f.ineq_jacobian(&y).tr_mul(&m) + gamma;
        crate::linalg::concat(&[stat, f.eq_values(&y)])
    };
    let fd_ftilde = central_jacobian(ftilde, &z0, h);

    Ok(FdReport {
        subsystem: model.index,
        gradient: relative_error(&col(b.grad_f.clone()), &col(fd_grad)),
        eq_jacobian: relative_error(&b.jac_eq, &fd_eq),
        ineq_jacobian: relative_error(&b.jac_ineq, &fd_ineq),
        hessian: relative_error(&b.hessian, &fd_hess),
        ftilde_jacobian: relative_error(&block.jacobian, &fd_ftilde),
    })
}

pub fn check_problem(problem: &PartitionedNlp, p: &PrimalDualPoint, h: f64) -> Result<Vec<FdReport>, ModelError> {
    p.check_dims(problem)?;
    problem
        .subsystems
        .iter()
        .map(|s| {
            let i = s.index;
            check_subsystem(s, &p.x[i], &p.nu[i], &p.mu[i], &p.gamma[i], h)
        })
        .collect()
}
