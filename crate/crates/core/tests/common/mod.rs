//! Helpers shared by the integration tests: a seeded random QP generator and
//! an exhaustive active-set enumeration oracle that uses nothing from the
//! library's QP solver.

#![allow(dead_code)]

use dsqp::qp::DenseQp;
use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Strictly convex, feasible QP with `n ≤ 8`, at most 3 equality rows and
/// at most 6 inequality rows. Roughly half the inequalities are tight at the
/// hidden feasible point, which makes degenerate vertices common.
pub fn random_qp(seed: u64) -> DenseQp {
    let mut r = rng(seed);
    let n = r.random_range(1..=8usize);
    let m_eq = r.random_range(0..=n.saturating_sub(1).min(3));
    let m_in = r.random_range(0..=6usize);
    let l = matrix(&mut r, n, n);
    let h = &l * l.transpose() + DMatrix::identity(n, n) * r.random_range(0.05..1.0);
    let q = vector(&mut r, n) * 3.0;
    let feasible = vector(&mut r, n);
    let a_eq = matrix(&mut r, m_eq, n);
    let b_eq = -(&a_eq * &feasible);
    let a_in = matrix(&mut r, m_in, n);
    let slack = DVector::from_fn(m_in, |_, _| if r.random_bool(0.5) { 0.0 } else { r.random_range(0.0..1.0) });
    let b_in = -(&a_in * &feasible) - slack;
    DenseQp { h, q, a_eq, b_eq, a_in, b_in }
}

/// Optimal objective by trying every working subset of the inequalities.
/// Returns the minimizer among KKT points that are primal and dual feasible.
pub fn enumerate_qp(qp: &DenseQp, tol: f64) -> Option<(f64, DVector<f64>)> {
    let n = qp.q.len();
    let m_eq = qp.a_eq.nrows();
    let m_in = qp.a_in.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m_in) {
        let w: Vec<usize> = (0..m_in).filter(|j| mask & (1 << j) != 0).collect();
        let m = m_eq + w.len();
        if m > n {
            continue;
        }
        let mut a = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        for i in 0..m_eq {
            a.set_row(i, &qp.a_eq.row(i));
            b[i] = qp.b_eq[i];
        }
        for (k, &j) in w.iter().enumerate() {
            a.set_row(m_eq + k, &qp.a_in.row(j));
            b[m_eq + k] = qp.b_in[j];
        }
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
        kkt.view_mut((0, n), (n, m)).copy_from(&a.transpose());
        kkt.view_mut((n, 0), (m, n)).copy_from(&a);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-&qp.q));
        rhs.rows_mut(n, m).copy_from(&(-&b));
        let svd = kkt.clone().svd(false, false);
        let smax = svd.singular_values.max();
        if svd.singular_values.min() <= 1e-12 * smax.max(1.0) {
            continue;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let s = sol.rows(0, n).into_owned();
        let mu_w = sol.rows(n + m_eq, w.len()).into_owned();
        if mu_w.iter().any(|&v| v < -tol) {
            continue;
        }
        let viol = (&qp.a_in * &s + &qp.b_in).iter().fold(0.0_f64, |a, &v| a.max(v));
        if viol > tol {
            continue;
        }
        let f = 0.5 * s.dot(&(&qp.h * &s)) + qp.q.dot(&s);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, s));
        }
    }
    best
}
