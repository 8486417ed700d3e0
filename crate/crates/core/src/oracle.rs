//! Brute-force KKT oracle for small problems: penalized grid search, compass
//! refinement, least-squares multiplier estimate and an exact-SQP polish.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::driver::{baseline_sqp, SolveError};
use crate::linalg;
use crate::model::{PartitionedNlp, PrimalDualPoint, DEFAULT_DELTA};
use crate::residuals::eval_f;

pub const MAX_DIMENSION: usize = 6;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle limited to {MAX_DIMENSION} variables, problem has {0}")]
    TooLarge(usize),
    #[error("box has {got} bounds for {expected} variables")]
    BoxDimension { got: usize, expected: usize },
    #[error("no KKT point found within budget")]
    NoPointFound,
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptions {
    /// Per stacked variable, `(lower, upper)` of the search box.
    pub bounds: Vec<(f64, f64)>,
    pub points_per_dim: usize,
    pub penalty: f64,
    /// Number of well-separated grid points refined further.
    pub starts: usize,
    pub pattern_tol: f64,
    pub pattern_max_iter: usize,
    pub kkt_tol: f64,
}

impl OracleOptions {
    /// Box `x⁰ ± radius` around a stacked start.
    pub fn around(x0: &DVector<f64>, radius: f64) -> Self {
        OracleOptions {
            bounds: x0.iter().map(|&v| (v - radius, v + radius)).collect(),
            points_per_dim: 9,
            penalty: 1e3,
            starts: 12,
            pattern_tol: 1e-9,
            pattern_max_iter: 20_000,
            kkt_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OraclePoint {
    #[serde(skip)]
    pub point: PrimalDualPoint,
    pub objective: f64,
    pub f_norm: f64,
    pub active_sets: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Distinct KKT points, best objective first.
    pub points: Vec<OraclePoint>,
}

impl OracleResult {
    pub fn best(&self) -> &OraclePoint {
        &self.points[0]
    }

    /// The point closest to `p` in the primal `∞`-norm.
    pub fn nearest(&self, p: &PrimalDualPoint) -> &OraclePoint {
        self.points
            .iter()
            .min_by(|a, b| a.point.primal_distance_inf(p).total_cmp(&b.point.primal_distance_inf(p)))
            .expect("oracle results are non-empty")
    }
}

fn split_primal(problem: &PartitionedNlp, z: &DVector<f64>) -> Vec<DVector<f64>> {
    linalg::split(z, &problem.var_dims())
}

/// `Σ f_i + P (‖g‖² + ‖max(h, 0)‖² + ‖Ex − c‖²)`; `+∞` on evaluation failure.
pub fn penalty_value(problem: &PartitionedNlp, z: &DVector<f64>, penalty: f64) -> f64 {
    let x = split_primal(problem, z);
    let mut viol = problem.coupling_residual(&x).norm_squared();
    let mut obj = 0.0;
    for (s, xi) in problem.subsystems.iter().zip(&x) {
        let f = &s.functions;
        obj += f.objective(xi);
        viol += f.eq_values(xi).norm_squared();
        viol += f.ineq_values(xi).iter().map(|&h| h.max(0.0).powi(2)).sum::<f64>();
    }
    let v = obj + penalty * viol;
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

fn compass_search(phi: &dyn Fn(&DVector<f64>) -> f64, z0: &DVector<f64>, step0: f64, tol: f64, max_iter: usize) -> DVector<f64> {
    let mut z = z0.clone();
    let mut fz = phi(&z);
    let mut step = step0;
    let mut it = 0;
    while step > tol && it < max_iter {
        it += 1;
        let mut improved = false;
        for j in 0..z.len() {
            for sign in [1.0, -1.0] {
                let mut trial = z.clone();
                trial[j] += sign * step;
                let ft = phi(&trial);
                if ft < fz {
                    z = trial;
                    fz = ft;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    z
}

/// Least-squares multipliers from stationarity with `h` rows within `act_tol`
/// treated as active. Inactive `μ` are zero and negative estimates clipped.
pub fn estimate_multipliers(problem: &PartitionedNlp, x: Vec<DVector<f64>>, act_tol: f64) -> PrimalDualPoint {
    let mut p = PrimalDualPoint::from_primal(problem, x);
    let n = problem.n_vars_total();
    let n_c = problem.n_coupling();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    // (subsystem, Some(row) for h, None-row index for g)
    let mut tags: Vec<(usize, bool, usize)> = Vec::new();
    let mut grad = DVector::zeros(n);
    let mut off = 0;
    for s in &problem.subsystems {
        let i = s.index;
        let f = &s.functions;
        let xi = &p.x[i];
        let ni = s.n_vars();
        grad.rows_mut(off, ni).copy_from(&f.gradient(xi));
        let jg = f.eq_jacobian(xi);
        for r in 0..jg.nrows() {
            let mut c = DVector::zeros(n);
            c.rows_mut(off, ni).copy_from(&jg.row(r).transpose());
            cols.push(c);
            tags.push((i, false, r));
        }
        let h = f.ineq_values(xi);
        let jh = f.ineq_jacobian(xi);
        for r in 0..h.len() {
            if h[r].abs() <= act_tol {
                let mut c = DVector::zeros(n);
                c.rows_mut(off, ni).copy_from(&jh.row(r).transpose());
                cols.push(c);
                tags.push((i, true, r));
            }
        }
        off += ni;
    }
    let e = problem.stacked_coupling();
    let m = cols.len() + n_c;
    if m == 0 {
        return p;
    }
    let mut a = DMatrix::zeros(n, m);
    for (k, c) in cols.iter().enumerate() {
        a.set_column(k, c);
    }
    a.view_mut((0, cols.len()), (n, n_c)).copy_from(&e.transpose());
    let svd = a.svd(true, true);
    let Ok(y) = svd.solve(&(-grad), 1e-12) else {
        return p;
    };
    for (k, &(i, is_h, r)) in tags.iter().enumerate() {
        if is_h {
            p.mu[i][r] = y[k].max(0.0);
        } else {
            p.nu[i][r] = y[k];
        }
    }
    let lambda = y.rows(cols.len(), n_c).into_owned();
    p.gamma = problem.gamma_from_lambda(&lambda);
    p
}

fn active_sets(problem: &PartitionedNlp, p: &PrimalDualPoint, tol: f64) -> Vec<Vec<usize>> {
    problem
        .subsystems
        .iter()
        .map(|s| {
            let h = s.functions.ineq_values(&p.x[s.index]);
            (0..h.len()).filter(|&j| h[j].abs() <= tol).collect()
        })
        .collect()
}

/// All KKT points reachable from the refined grid starts, sorted by objective.
pub fn brute_force_oracle(problem: &PartitionedNlp, opts: &OracleOptions) -> Result<OracleResult, OracleError> {
    let n = problem.n_vars_total();
    if n > MAX_DIMENSION {
        return Err(OracleError::TooLarge(n));
    }
    if opts.bounds.len() != n {
        return Err(OracleError::BoxDimension {
            got: opts.bounds.len(),
            expected: n,
        });
    }
    let k = opts.points_per_dim.max(2);
    let spacing: Vec<f64> = opts.bounds.iter().map(|&(lo, hi)| (hi - lo) / (k - 1) as f64).collect();
    let phi = |z: &DVector<f64>| penalty_value(problem, z, opts.penalty);

    let total = k.pow(n as u32);
    let point = |idx: usize| {
        let mut rem = idx;
        DVector::from_iterator(
            n,
            opts.bounds.iter().zip(&spacing).map(|(&(lo, _), &h)| {
                let t = rem % k;
                rem /= k;
                lo + h * t as f64
            }),
        )
    };
    let values: Vec<f64> = (0..total).map(|idx| phi(&point(idx))).collect();
    // Discrete local minima over axis neighbors, one per basin of the penalty.
    let mut minima: Vec<usize> = (0..total)
        .filter(|&idx| {
            let v = values[idx];
            v.is_finite()
                && (0..n).all(|d| {
                    let stride = k.pow(d as u32);
                    let t = (idx / stride) % k;
                    (t == 0 || values[idx - stride] >= v) && (t + 1 == k || values[idx + stride] >= v)
                })
        })
        .collect();
    minima.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let starts: Vec<DVector<f64>> = minima.into_iter().take(opts.starts).map(point).collect();

    let step0 = spacing.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut found: Vec<OraclePoint> = Vec::new();
    for z0 in starts {
        let z = compass_search(&phi, &z0, step0, opts.pattern_tol, opts.pattern_max_iter);
        let p0 = estimate_multipliers(problem, split_primal(problem, &z), 1e-3);
        let res = baseline_sqp(problem, &p0, opts.kkt_tol * 1e-2, 60, DEFAULT_DELTA)?;
        if !res.converged() {
            continue;
        }
        let p = res.point;
        let Ok(r) = eval_f(problem, &p) else { continue };
        let f_norm = r.norm_inf();
        if f_norm > opts.kkt_tol {
            continue;
        }
        if found.iter().any(|q| q.point.primal_distance_inf(&p) < 1e-6) {
            continue;
        }
        found.push(OraclePoint {
            objective: problem.objective(&p.x),
            f_norm,
            active_sets: active_sets(problem, &p, 1e-8),
            point: p,
        });
    }
    if found.is_empty() {
        return Err(OracleError::NoPointFound);
    }
    // Exact ties are common on symmetric problems; order them lexicographically.
    found.sort_by(|a, b| {
        a.objective.total_cmp(&b.objective).then_with(|| {
            let (za, zb) = (a.point.flat_primal(), b.point.flat_primal());
            za.iter().zip(zb.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    Ok(OracleResult { points: found })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SubsystemFunctions;
    use std::sync::Arc;

    /// `min x² s.t. x² + 1 = 0`.
    #[derive(Debug)]
    struct NoRealRoot;
    impl SubsystemFunctions for NoRealRoot {
        fn n_vars(&self) -> usize {
            1
        }
        fn n_eq(&self) -> usize {
            1
        }
        fn objective(&self, x: &DVector<f64>) -> f64 {
            x[0] * x[0]
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::from_element(1, 2.0 * x[0])
        }
        fn eq_values(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::from_element(1, x[0] * x[0] + 1.0)
        }
        fn eq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, 2.0 * x[0])
        }
        fn lagrangian_hessian(&self, _: &DVector<f64>, nu: &DVector<f64>, _: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, 2.0 + 2.0 * nu[0])
        }
    }

    #[test]
    fn infeasible_toy_has_no_point() {
        let p = PartitionedNlp::new(vec![(Arc::new(NoRealRoot), DMatrix::zeros(0, 1))], DVector::zeros(0)).unwrap();
        let opts = OracleOptions::around(&DVector::from_element(1, 0.3), 2.0);
        assert!(matches!(brute_force_oracle(&p, &opts), Err(OracleError::NoPointFound)));
    }

    #[test]
    fn rejects_large_problems() {
        let b = crate::problems::load_problem(crate::problems::ProblemId::Net3, 0).unwrap();
        let opts = OracleOptions::around(&DVector::zeros(24), 1.0);
        assert!(matches!(brute_force_oracle(&b.problem, &opts), Err(OracleError::TooLarge(24))));
    }

    #[test]
    fn penalty_is_objective_when_feasible() {
        let b = crate::problems::load_problem(crate::problems::ProblemId::P1, 0).unwrap();
        // x1 on the circle with x1_2 >= 0, x2 copying x1_1, x2_2 <= 0.3.
        let z = DVector::from_vec(vec![0.6, 0.8, 0.6, 0.1]);
        let obj = 0.6 + 0.8 + 0.01 + 0.01;
        assert!((penalty_value(&b.problem, &z, 1e3) - obj).abs() < 1e-12);
    }
}
