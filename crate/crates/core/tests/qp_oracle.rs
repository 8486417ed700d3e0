mod common;

use dsqp::qp::{kkt_certificate, solve_qp, DenseQp, QpStatus, DEFAULT_KKT_TOL};
use nalgebra::{DMatrix, DVector};
use rand::RngExt;

fn check(qp: &DenseQp, warm: Option<&[usize]>, seed: u64) {
    let (f_enum, s_enum) = common::enumerate_qp(qp, 1e-9).expect("feasible by construction");
    let sol = solve_qp(qp, warm, DEFAULT_KKT_TOL).unwrap();
    assert_eq!(sol.status, QpStatus::Solved, "seed {seed}");
    let cert = kkt_certificate(qp, &sol.s, &sol.nu, &sol.mu);
    assert!(cert.passes(1e-8), "seed {seed}: {cert:?}");
    let gap = (qp.objective(&sol.s) - f_enum).abs() / f_enum.abs().max(1.0);
    assert!(gap <= 1e-8, "seed {seed}: gap {gap:e}");
    // Strict convexity makes the minimizer unique.
    assert!((&sol.s - &s_enum).amax() <= 1e-6, "seed {seed}");
}

#[test]
fn random_qps_match_enumeration_cold() {
    for seed in 1000..1500 {
        check(&common::random_qp(seed), None, seed);
    }
}

#[test]
fn random_qps_match_enumeration_with_arbitrary_warm_starts() {
    let mut rng = common::rng(77);
    for seed in 2000..2300 {
        let qp = common::random_qp(seed);
        let m = qp.a_in.nrows();
        let hint: Vec<usize> = (0..m + 2).filter(|_| rng.random_bool(0.4)).collect();
        check(&qp, Some(&hint), seed);
    }
}

#[test]
fn warm_start_from_solution_needs_no_changes() {
    for seed in 3000..3100 {
        let qp = common::random_qp(seed);
        let cold = solve_qp(&qp, None, DEFAULT_KKT_TOL).unwrap();
        if cold.degenerate {
            continue;
        }
        let warm = solve_qp(&qp, Some(&cold.active_set), DEFAULT_KKT_TOL).unwrap();
        assert_eq!(warm.iterations, 0, "seed {seed}");
        assert!((&warm.s - &cold.s).amax() <= 1e-10);
    }
}

#[test]
fn empty_feasible_set_is_reported() {
    // s ≤ -1 and -s ≤ -1.
    let qp = DenseQp {
        h: DMatrix::identity(1, 1),
        q: DVector::zeros(1),
        a_eq: DMatrix::zeros(0, 1),
        b_eq: DVector::zeros(0),
        a_in: DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
        b_in: DVector::from_vec(vec![1.0, 1.0]),
    };
    assert_eq!(solve_qp(&qp, None, DEFAULT_KKT_TOL).unwrap().status, QpStatus::Infeasible);
}

#[test]
fn degenerate_vertex_with_redundant_rows() {
    // Three rows through the origin in the plane, minimizer at the origin.
    let qp = DenseQp {
        h: DMatrix::identity(2, 2),
        q: DVector::from_vec(vec![1.0, 1.0]),
        a_eq: DMatrix::zeros(0, 2),
        b_eq: DVector::zeros(0),
        a_in: DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, -1.0, -1.0]),
        b_in: DVector::zeros(3),
    };
    check(&qp, None, 0);
    let sol = solve_qp(&qp, None, DEFAULT_KKT_TOL).unwrap();
    assert_eq!(sol.active_set, vec![0, 1, 2]);
}
