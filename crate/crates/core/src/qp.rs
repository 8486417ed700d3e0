//! Dense convex QP solver.
//!
//! ```text
//!     minimize    ½ sᵀ H s + qᵀ s
//!     subject to  A_eq s + b_eq  = 0
//!                 A_in s + b_in <= 0
//! ```
//!
//! `H` only needs to be positive definite on `null(A_eq)`. The solver is a
//! primal active-set method; a feasible starting point comes from projecting
//! the equality-constrained minimizer onto the feasible polyhedron with a dual
//! (Goldfarb–Idnani style) method, which also detects infeasibility.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{self, norm_inf, null_space, solve_square};

pub const DEFAULT_KKT_TOL: f64 = 1e-10;

/// Inequalities with `|A_in s + b_in| <= ACTIVE_TOL` are reported as active.
pub const ACTIVE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("equality constraint matrix is rank deficient (rank {rank} < {rows})")]
    RankDeficient { rank: usize, rows: usize },
    #[error("singular KKT matrix")]
    SingularKkt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl DenseQp {
    pub fn unconstrained(h: DMatrix<f64>, q: DVector<f64>) -> Self {
        let n = q.len();
        DenseQp {
            h,
            q,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
        }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, s: &DVector<f64>) -> f64 {
        0.5 * s.dot(&(&self.h * s)) + self.q.dot(s)
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.n();
        let bad = |what: &str| Err(QpError::Dimension(what.to_string()));
        if self.h.shape() != (n, n) {
            return bad("H must be n x n");
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return bad("A_eq / b_eq");
        }
        if self.a_in.ncols() != n || self.a_in.nrows() != self.b_in.len() {
            return bad("A_in / b_in");
        }
        if self.a_eq.nrows() > n {
            return Err(QpError::RankDeficient {
                rank: n,
                rows: self.a_eq.nrows(),
            });
        }
        Ok(())
    }

    fn ineq_value(&self, j: usize, s: &DVector<f64>) -> f64 {
        self.a_in.row(j).dot(&s.transpose()) + self.b_in[j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Solved,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub s: DVector<f64>,
    pub nu: DVector<f64>,
    pub mu: DVector<f64>,
    /// Sorted inequality rows active at `s`.
    pub active_set: Vec<usize>,
    pub status: QpStatus,
    /// Some active row has a (numerically) zero multiplier.
    pub degenerate: bool,
    /// Working-set changes performed.
    pub iterations: usize,
}

/// Independent residual check of a QP solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktCertificate {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_in: f64,
    pub dual_feasibility: f64,
    pub complementarity: f64,
}

impl KktCertificate {
    pub fn max(&self) -> f64 {
        [
            self.stationarity,
            self.primal_eq,
            self.primal_in,
            self.dual_feasibility,
            self.complementarity,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

pub fn kkt_certificate(qp: &DenseQp, s: &DVector<f64>, nu: &DVector<f64>, mu: &DVector<f64>) -> KktCertificate {
    let stat = &qp.h * s + &qp.q + qp.a_eq.transpose() * nu + qp.a_in.transpose() * mu;
    let eq = &qp.a_eq * s + &qp.b_eq;
    let ineq = &qp.a_in * s + &qp.b_in;
    let primal_in = ineq.iter().fold(0.0_f64, |a, &v| a.max(v));
    let dual = mu.iter().fold(0.0_f64, |a, &v| a.max(-v));
    let comp = mu
        .iter()
        .zip(ineq.iter())
        .fold(0.0_f64, |a, (&m, &c)| a.max((m * c).abs()));
    KktCertificate {
        stationarity: norm_inf(&stat),
        primal_eq: norm_inf(&eq),
        primal_in,
        dual_feasibility: dual,
        complementarity: comp,
    }
}

/// Solves `[H A_eqᵀ; A_eq 0] [s; ν] = [-q; -b_eq]`.
pub fn solve_eq_qp(
    h: &DMatrix<f64>,
    q: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), QpError> {
    let n = q.len();
    if h.shape() != (n, n) || a_eq.ncols() != n || a_eq.nrows() != b_eq.len() {
        return Err(QpError::Dimension("equality QP".into()));
    }
    let m = a_eq.nrows();
    let kkt = assemble_kkt(h, &[a_eq]);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-q));
    rhs.rows_mut(n, m).copy_from(&(-b_eq));
    let sol = solve_square(&kkt, &rhs).ok_or(QpError::SingularKkt)?;
    Ok((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
}

fn assemble_kkt(h: &DMatrix<f64>, blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = h.nrows();
    let m: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    let mut row = n;
    for b in blocks {
        let k = b.nrows();
        kkt.view_mut((row, 0), (k, n)).copy_from(*b);
        kkt.view_mut((0, row), (n, k)).copy_from(&b.transpose());
        row += k;
    }
    kkt
}

fn select_rows(a: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), a.ncols());
    for (dst, &src) in rows.iter().enumerate() {
        out.set_row(dst, &a.row(src));
    }
    out
}

fn select(v: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.iter().map(|&j| v[j]))
}

/// Minimizer of the QP restricted to `A_eq s + b_eq = 0`, `A_W s + b_W = 0`.
/// Returns `(s, ν, μ_W)`.
fn solve_on_working_set(
    qp: &DenseQp,
    working: &[usize],
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = qp.n();
    let me = qp.a_eq.nrows();
    let a_w = select_rows(&qp.a_in, working);
    let kkt = assemble_kkt(&qp.h, &[&qp.a_eq, &a_w]);
    let mut rhs = DVector::zeros(n + me + working.len());
    rhs.rows_mut(0, n).copy_from(&(-&qp.q));
    rhs.rows_mut(n, me).copy_from(&(-&qp.b_eq));
    rhs.rows_mut(n + me, working.len())
        .copy_from(&(-select(&qp.b_in, working)));
    let sol = solve_square(&kkt, &rhs)?;
    Some((
        sol.rows(0, n).into_owned(),
        sol.rows(n, me).into_owned(),
        sol.rows(n + me, working.len()).into_owned(),
    ))
}

/// Step `p` from `s` within the working set plus multipliers valid at `s + p`.
fn working_set_step(
    qp: &DenseQp,
    s: &DVector<f64>,
    working: &[usize],
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = qp.n();
    let me = qp.a_eq.nrows();
    let a_w = select_rows(&qp.a_in, working);
    let kkt = assemble_kkt(&qp.h, &[&qp.a_eq, &a_w]);
    let grad = &qp.h * s + &qp.q;
    let mut rhs = DVector::zeros(n + me + working.len());
    rhs.rows_mut(0, n).copy_from(&(-grad));
    let sol = solve_square(&kkt, &rhs)?;
    Some((
        sol.rows(0, n).into_owned(),
        sol.rows(n, me).into_owned(),
        sol.rows(n + me, working.len()).into_owned(),
    ))
}

fn feasibility_tol(qp: &DenseQp) -> f64 {
    1e-12 * (1.0 + norm_inf(&qp.b_in).max(norm_inf(&qp.b_eq)))
}

/// Solves a convex QP, optionally seeding the working set with `warm_start`.
pub fn solve_qp(qp: &DenseQp, warm_start: Option<&[usize]>, kkt_tol: f64) -> Result<QpSolution, QpError> {
    qp.validate()?;
    let n = qp.n();
    let me = qp.a_eq.nrows();
    let mi = qp.a_in.nrows();
    if me > 0 {
        let ns = null_space(&qp.a_eq);
        if !ns.full_row_rank(me) {
            return Err(QpError::RankDeficient { rank: ns.rank, rows: me });
        }
    }
    let feas_tol = feasibility_tol(qp);
    let mult_tol = 0.1 * kkt_tol;

    let mut start: Option<(DVector<f64>, Vec<usize>)> = None;
    if let Some(hint) = warm_start {
        let mut w: Vec<usize> = hint.iter().copied().filter(|&j| j < mi).collect();
        w.sort_unstable();
        w.dedup();
        if w.len() + me <= n {
            if let Some((s, _, _)) = solve_on_working_set(qp, &w) {
                let feasible = (0..mi)
                    .filter(|j| w.binary_search(j).is_err())
                    .all(|j| qp.ineq_value(j, &s) <= feas_tol);
                if feasible && linalg::all_finite_vec(&s) {
                    start = Some((s, w));
                }
            }
        }
    }
    let (mut s, mut working) = match start {
        Some(st) => st,
        None => {
            let (s_eq, _) = solve_eq_qp(&qp.h, &qp.q, &qp.a_eq, &qp.b_eq)?;
            if (0..mi).all(|j| qp.ineq_value(j, &s_eq) <= feas_tol) {
                (s_eq, Vec::new())
            } else {
                match project_onto_feasible_set(qp, &s_eq) {
                    Some(found) => found,
                    None => {
                        return Ok(QpSolution {
                            s: s_eq,
                            nu: DVector::zeros(me),
                            mu: DVector::zeros(mi),
                            active_set: Vec::new(),
                            status: QpStatus::Infeasible,
                            degenerate: false,
                            iterations: 0,
                        })
                    }
                }
            }
        }
    };

    let limit = 50 * (n + mi);
    let mut changes = 0usize;
    let mut nu;
    let mut mu_w;
    loop {
        let (p, nu_step, mu_step) = working_set_step(qp, &s, &working).ok_or(QpError::SingularKkt)?;
        // Largest feasible step along p; ties resolved by lowest row index.
        let mut alpha = 1.0;
        let mut blocking = None;
        // A round-off step at a vertex must not pull in a dependent row.
        let negligible = norm_inf(&p) <= 1e-13 * (1.0 + norm_inf(&s));
        for j in 0..mi {
            if negligible || working.binary_search(&j).is_ok() {
                continue;
            }
            let ap = qp.a_in.row(j).dot(&p.transpose());
            let scale = qp.a_in.row(j).amax() * norm_inf(&p);
            if ap <= 1e-14 * scale || ap <= 0.0 {
                continue;
            }
            let slack = -qp.ineq_value(j, &s);
            let a_j = (slack / ap).max(0.0);
            if a_j < alpha {
                alpha = a_j;
                blocking = Some(j);
            }
        }
        match blocking {
            Some(j) => {
                s += alpha * &p;
                let pos = working.binary_search(&j).unwrap_err();
                working.insert(pos, j);
            }
            None => {
                s += &p;
                nu = nu_step;
                mu_w = mu_step;
                // Drop the most negative multiplier; lowest row wins ties.
                let mut worst: Option<(usize, f64)> = None;
                for (k, &m) in mu_w.iter().enumerate() {
                    if m < -mult_tol && worst.is_none_or(|(_, w)| m < w) {
                        worst = Some((k, m));
                    }
                }
                match worst {
                    None => break,
                    Some((k, _)) => {
                        working.remove(k);
                    }
                }
            }
        }
        changes += 1;
        if changes > limit {
            return Ok(QpSolution {
                s,
                nu: DVector::zeros(me),
                mu: DVector::zeros(mi),
                active_set: working.clone(),
                status: QpStatus::IterationLimit,
                degenerate: false,
                iterations: changes,
            });
        }
    }

    // Polish: solve the final working-set system directly.
    if let Some((sp, nup, mup)) = solve_on_working_set(qp, &working) {
        let feasible = (0..mi).all(|j| qp.ineq_value(j, &sp) <= feas_tol);
        if feasible && mup.iter().all(|&m| m >= -mult_tol) && linalg::all_finite_vec(&sp) {
            s = sp;
            nu = nup;
            mu_w = mup;
        }
    }

    let mut mu = DVector::zeros(mi);
    for (k, &j) in working.iter().enumerate() {
        mu[j] = mu_w[k].max(0.0);
    }
    let active_set: Vec<usize> = (0..mi)
        .filter(|&j| working.binary_search(&j).is_ok() || qp.ineq_value(j, &s).abs() <= ACTIVE_TOL)
        .collect();
    let degenerate = active_set.iter().any(|&j| mu[j] <= ACTIVE_TOL);
    Ok(QpSolution {
        s,
        nu,
        mu,
        active_set,
        status: QpStatus::Solved,
        degenerate,
        iterations: changes,
    })
}

/// Euclidean projection of `r` onto `{A_eq s + b_eq = 0, A_in s + b_in <= 0}`
/// by a dual active-set method. Returns the projection and the (linearly
/// independent) inequality rows active in the final dual basis, or `None`
/// when the polyhedron is empty.
fn project_onto_feasible_set(qp: &DenseQp, r: &DVector<f64>) -> Option<(DVector<f64>, Vec<usize>)> {
    #[derive(Clone, Copy)]
    enum Row {
        Eq(usize, f64),
        In(usize),
    }
    let n = qp.n();
    let me = qp.a_eq.nrows();
    let mi = qp.a_in.nrows();
    let feas_tol = feasibility_tol(qp);
    let normal = |row: Row| -> DVector<f64> {
        match row {
            Row::Eq(j, sign) => qp.a_eq.row(j).transpose() * sign,
            Row::In(j) => qp.a_in.row(j).transpose(),
        }
    };
    let value = |row: Row, x: &DVector<f64>| -> f64 {
        match row {
            Row::Eq(j, sign) => sign * (qp.a_eq.row(j).dot(&x.transpose()) + qp.b_eq[j]),
            Row::In(j) => qp.ineq_value(j, x),
        }
    };

    let mut x = r.clone();
    let mut active: Vec<Row> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut next_eq = 0;
    let cap = 20 * (n + me + mi) + 50;
    let mut iters = 0;
    loop {
        let candidate = if next_eq < me {
            let v = qp.a_eq.row(next_eq).dot(&x.transpose()) + qp.b_eq[next_eq];
            let row = Row::Eq(next_eq, if v >= 0.0 { 1.0 } else { -1.0 });
            next_eq += 1;
            Some(row)
        } else {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..mi {
                if active.iter().any(|a| matches!(a, Row::In(k) if *k == j)) {
                    continue;
                }
                let v = qp.ineq_value(j, &x);
                if v > feas_tol && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
            best.map(|(j, _)| Row::In(j))
        };
        let Some(p_row) = candidate else {
            let rows = active
                .iter()
                .filter_map(|a| match a {
                    Row::In(j) => Some(*j),
                    Row::Eq(..) => None,
                })
                .collect::<Vec<_>>();
            let mut rows = rows;
            rows.sort_unstable();
            return Some((x, rows));
        };
        let n_p = normal(p_row);
        let mut u_p = 0.0;
        loop {
            iters += 1;
            if iters > cap {
                return None;
            }
            let k = active.len();
            let mut nmat = DMatrix::zeros(n, k);
            for (c, &row) in active.iter().enumerate() {
                nmat.set_column(c, &normal(row));
            }
            let r_a = if k == 0 {
                DVector::zeros(0)
            } else {
                let gram = nmat.transpose() * &nmat;
                solve_square(&gram, &(nmat.transpose() * &n_p))?
            };
            let z = &n_p - &nmat * &r_a;
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (c, row) in active.iter().enumerate() {
                if matches!(row, Row::In(_)) && r_a[c] > 0.0 {
                    let t = u[c] / r_a[c];
                    if t < t1 {
                        t1 = t;
                        drop_at = Some(c);
                    }
                }
            }
            let zz = z.norm_squared();
            if zz <= 1e-24 * n_p.norm_squared().max(1e-300) {
                let c = drop_at?;
                for (uc, rc) in u.iter_mut().zip(r_a.iter()) {
                    *uc -= t1 * rc;
                }
                u_p += t1;
                active.remove(c);
                u.remove(c);
                continue;
            }
            let t2 = value(p_row, &x).max(0.0) / zz;
            let t = t1.min(t2);
            x -= t * &z;
            for (uc, rc) in u.iter_mut().zip(r_a.iter()) {
                *uc -= t * rc;
            }
            u_p += t;
            if t2 <= t1 {
                active.push(p_row);
                u.push(u_p);
                break;
            }
            let c = drop_at.expect("finite t1 has a blocking row");
            active.remove(c);
            u.remove(c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn unconstrained_newton_step() {
        let qp = DenseQp::unconstrained(DMatrix::identity(2, 2), v(&[1.0, 0.0]));
        let sol = solve_qp(&qp, None, DEFAULT_KKT_TOL).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert_eq!(sol.s, v(&[-1.0, 0.0]));
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn half_space_projection() {
        let mut qp = DenseQp::unconstrained(DMatrix::identity(2, 2), v(&[0.0, 0.0]));
        qp.a_in = DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]);
        qp.b_in = v(&[1.0]);
        let sol = solve_qp(&qp, None, DEFAULT_KKT_TOL).unwrap();
        assert!((sol.s - v(&[1.0, 0.0])).amax() < 1e-14);
        assert!((sol.mu[0] - 1.0).abs() < 1e-14);
        assert_eq!(sol.active_set, vec![0]);
        assert!(!sol.degenerate);
    }

    #[test]
    fn nearest_point_on_line() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let (s, nu) = solve_eq_qp(&DMatrix::identity(2, 2), &v(&[0.0, 0.0]), &a, &v(&[-1.0])).unwrap();
        assert!((s - v(&[0.5, 0.5])).amax() < 1e-15);
        assert!((nu[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn diagonal_solve() {
        let h = DMatrix::from_diagonal(&v(&[1.0, 2.0]));
        let (s, nu) = solve_eq_qp(&h, &v(&[-1.0, -1.0]), &DMatrix::zeros(0, 2), &DVector::zeros(0)).unwrap();
        assert!((s - v(&[1.0, 0.5])).amax() < 1e-15);
        assert_eq!(nu.len(), 0);
    }

    #[test]
    fn infeasible_box_is_detected() {
        let mut qp = DenseQp::unconstrained(DMatrix::identity(1, 1), v(&[0.0]));
        // s <= -1 and s >= 1
        qp.a_in = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        qp.b_in = v(&[1.0, 1.0]);
        let sol = solve_qp(&qp, None, DEFAULT_KKT_TOL).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn rank_deficient_equalities_error() {
        let mut qp = DenseQp::unconstrained(DMatrix::identity(2, 2), v(&[0.0, 0.0]));
        qp.a_eq = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        qp.b_eq = v(&[1.0, 2.0]);
        assert!(matches!(solve_qp(&qp, None, DEFAULT_KKT_TOL), Err(QpError::RankDeficient { .. })));
    }

    #[test]
    fn indefinite_hessian_on_null_space_of_equalities() {
        // H indefinite overall, positive definite on null([1 0]).
        let h = DMatrix::from_diagonal(&v(&[-1.0, 1.0]));
        let mut qp = DenseQp::unconstrained(h, v(&[0.0, -2.0]));
        qp.a_eq = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        qp.b_eq = v(&[-0.5]);
        qp.a_in = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        qp.b_in = v(&[-1.0]);
        let sol = solve_qp(&qp, None, DEFAULT_KKT_TOL).unwrap();
        assert!((&sol.s - v(&[0.5, 1.0])).amax() < 1e-13);
        assert_eq!(sol.active_set, vec![0]);
        assert!(kkt_certificate(&qp, &sol.s, &sol.nu, &sol.mu).passes(1e-10));
    }

    #[test]
    fn weakly_active_constraint_sets_degeneracy_flag() {
        let mut qp = DenseQp::unconstrained(DMatrix::identity(1, 1), v(&[-1.0]));
        // minimizer s = 1 sits exactly on s <= 1
        qp.a_in = DMatrix::from_row_slice(1, 1, &[1.0]);
        qp.b_in = v(&[-1.0]);
        let sol = solve_qp(&qp, None, DEFAULT_KKT_TOL).unwrap();
        assert_eq!(sol.active_set, vec![0]);
        assert!(sol.degenerate);
    }

    #[test]
    fn warm_start_with_wrong_hint_still_solves() {
        let mut qp = DenseQp::unconstrained(DMatrix::identity(2, 2), v(&[0.0, 0.0]));
        qp.a_in = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        qp.b_in = v(&[1.0, -5.0]);
        let cold = solve_qp(&qp, None, DEFAULT_KKT_TOL).unwrap();
        let warm = solve_qp(&qp, Some(&[1, 7]), DEFAULT_KKT_TOL).unwrap();
        assert!((cold.s - warm.s).amax() < 1e-12);
        assert_eq!(warm.active_set, vec![0]);
    }
}
