//! Benchmark problem library.
//!
//! * `P1`: two subsystems in the plane, one consensus row.
//! * `P2`: four subsystems on a ring with double-well objectives and
//!   trigonometric equalities. Each agent owns one coordinate that both ring
//!   neighbors copy, so every coordinate is a star with two copies.
//! * `net3`: a three-bus AC power-flow style dispatch problem in which every
//!   bus keeps copies of the voltage magnitude and angle of the other buses.
//! * `custom`: a seeded random chain of strongly convex quadratic subsystems.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, PartitionedNlp, PrimalDualPoint, SubsystemFunctions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("unknown problem id `{0}` (expected P1, P2, net3 or custom)")]
    UnknownId(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ProblemId {
    P1,
    P2,
    Net3,
    Custom,
}

impl FromStr for ProblemId {
    type Err = ProblemError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "p1" => Ok(ProblemId::P1),
            "p2" => Ok(ProblemId::P2),
            "net3" => Ok(ProblemId::Net3),
            "custom" => Ok(ProblemId::Custom),
            _ => Err(ProblemError::UnknownId(s.to_string())),
        }
    }
}

impl TryFrom<String> for ProblemId {
    type Error = ProblemError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ProblemId> for String {
    fn from(id: ProblemId) -> String {
        id.to_string()
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProblemId::P1 => "P1",
            ProblemId::P2 => "P2",
            ProblemId::Net3 => "net3",
            ProblemId::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// A library instance with its default starting point.
#[derive(Debug, Clone)]
pub struct BenchProblem {
    pub id: ProblemId,
    pub problem: PartitionedNlp,
    pub x0: Vec<DVector<f64>>,
    /// Penalty used when the caller does not set one.
    pub rho: f64,
}

impl BenchProblem {
    /// `x⁰` with zero multipliers.
    pub fn start(&self) -> PrimalDualPoint {
        PrimalDualPoint::from_primal(&self.problem, self.x0.clone())
    }
}

/// Loads a library problem; `seed` only affects `custom`.
pub fn load_problem(id: ProblemId, seed: u64) -> Result<BenchProblem, ProblemError> {
    match id {
        ProblemId::P1 => p1(),
        ProblemId::P2 => p2(),
        ProblemId::Net3 => net3(),
        ProblemId::Custom => custom(seed, 3, 3),
    }
}

/// `f = ½xᵀQx + qᵀx`, `g = Ax + b`, `h = Cx + d`.
#[derive(Debug, Clone)]
pub struct QuadraticSubsystem {
    pub q_mat: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl QuadraticSubsystem {
    pub fn unconstrained(q_mat: DMatrix<f64>, q: DVector<f64>) -> Self {
        let n = q.len();
        QuadraticSubsystem {
            q_mat,
            q,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            c: DMatrix::zeros(0, n),
            d: DVector::zeros(0),
        }
    }
}

impl SubsystemFunctions for QuadraticSubsystem {
    fn n_vars(&self) -> usize {
        self.q.len()
    }
    fn n_eq(&self) -> usize {
        self.b.len()
    }
    fn n_ineq(&self) -> usize {
        self.d.len()
    }
    fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q_mat * x)) + self.q.dot(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q_mat * x + &self.q
    }
    fn eq_values(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b
    }
    fn eq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
    fn ineq_values(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.d
    }
    fn ineq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.c.clone()
    }
    fn lagrangian_hessian(&self, _x: &DVector<f64>, _nu: &DVector<f64>, _mu: &DVector<f64>) -> DMatrix<f64> {
        self.q_mat.clone()
    }
}

fn row(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, values.len(), values)
}

fn vec1(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

// ---------------------------------------------------------------- P1

/// `f = x₁ + x₂`, `g = x₁² + x₂² − 1`, `h = −x₂`.
#[derive(Debug, Clone, Copy)]
pub struct P1Circle;

impl SubsystemFunctions for P1Circle {
    fn n_vars(&self) -> usize {
        2
    }
    fn n_eq(&self) -> usize {
        1
    }
    fn n_ineq(&self) -> usize {
        1
    }
    fn objective(&self, x: &DVector<f64>) -> f64 {
        x[0] + x[1]
    }
    fn gradient(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(2, 1.0)
    }
    fn eq_values(&self, x: &DVector<f64>) -> DVector<f64> {
        vec1(x[0] * x[0] + x[1] * x[1] - 1.0)
    }
    fn eq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        row(&[2.0 * x[0], 2.0 * x[1]])
    }
    fn ineq_values(&self, x: &DVector<f64>) -> DVector<f64> {
        vec1(-x[1])
    }
    fn ineq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        row(&[0.0, -1.0])
    }
    fn lagrangian_hessian(&self, _x: &DVector<f64>, nu: &DVector<f64>, _mu: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * (2.0 * nu[0])
    }
}

/// `f = (x₁ − ½)² + x₂²`, `h = x₂ − 0.3`.
#[derive(Debug, Clone, Copy)]
pub struct P1Bowl;

impl SubsystemFunctions for P1Bowl {
    fn n_vars(&self) -> usize {
        2
    }
    fn n_ineq(&self) -> usize {
        1
    }
    fn objective(&self, x: &DVector<f64>) -> f64 {
        (x[0] - 0.5).powi(2) + x[1] * x[1]
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![2.0 * (x[0] - 0.5), 2.0 * x[1]])
    }
    fn ineq_values(&self, x: &DVector<f64>) -> DVector<f64> {
        vec1(x[1] - 0.3)
    }
    fn ineq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        row(&[0.0, 1.0])
    }
    fn lagrangian_hessian(&self, _x: &DVector<f64>, _nu: &DVector<f64>, _mu: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * 2.0
    }
}

pub fn p1_problem() -> PartitionedNlp {
    PartitionedNlp::new(
        vec![(Arc::new(P1Circle), row(&[1.0, 0.0])), (Arc::new(P1Bowl), row(&[-1.0, 0.0]))],
        DVector::zeros(1),
    )
    .expect("P1 is well formed")
}

/// Default start of P1: coupling feasible, away from the degenerate origin of
/// the circle constraint.
pub fn p1_start() -> Vec<DVector<f64>> {
    vec![DVector::from_vec(vec![1.2, 0.3]), DVector::from_vec(vec![1.2, 0.2])]
}

fn p1() -> Result<BenchProblem, ProblemError> {
    Ok(BenchProblem {
        id: ProblemId::P1,
        problem: p1_problem(),
        x0: p1_start(),
        rho: 1e3,
    })
}

// ---------------------------------------------------------------- P2

/// Ring agent with `x = (a, b, c, d)`; `c` copies the next agent's `a`, `d`
/// the previous agent's.
///
/// ```text
/// f = ¼a⁴ − ½a² + θa + ½(b − β)² + ½σ((a − c)² + (a − d)²)
/// g = sin b + ½a − ⅕cos(c − d) − τ
/// h = (a² + b² − 4, −b − 1)
/// ```
#[derive(Debug, Clone, Copy)]
pub struct RingAgent {
    pub theta: f64,
    pub beta: f64,
    pub sigma: f64,
    pub tau: f64,
}

impl SubsystemFunctions for RingAgent {
    fn n_vars(&self) -> usize {
        4
    }
    fn n_eq(&self) -> usize {
        1
    }
    fn n_ineq(&self) -> usize {
        2
    }
    fn objective(&self, x: &DVector<f64>) -> f64 {
        let (a, b, c, d) = (x[0], x[1], x[2], x[3]);
        0.25 * a.powi(4) - 0.5 * a * a
            + self.theta * a
            + 0.5 * (b - self.beta).powi(2)
            + 0.5 * self.sigma * ((a - c).powi(2) + (a - d).powi(2))
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let (a, b, c, d) = (x[0], x[1], x[2], x[3]);
        let s = self.sigma;
        DVector::from_vec(vec![
            a.powi(3) - a + self.theta + s * (2.0 * a - c - d),
            b - self.beta,
            -s * (a - c),
            -s * (a - d),
        ])
    }
    fn eq_values(&self, x: &DVector<f64>) -> DVector<f64> {
        vec1(x[1].sin() + 0.5 * x[0] - 0.2 * (x[2] - x[3]).cos() - self.tau)
    }
    fn eq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let w = 0.2 * (x[2] - x[3]).sin();
        row(&[0.5, x[1].cos(), w, -w])
    }
    fn ineq_values(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[0] * x[0] + x[1] * x[1] - 4.0, -x[1] - 1.0])
    }
    fn ineq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 4, &[2.0 * x[0], 2.0 * x[1], 0.0, 0.0, 0.0, -1.0, 0.0, 0.0])
    }
    fn lagrangian_hessian(&self, x: &DVector<f64>, nu: &DVector<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
        let (a, b, c, d) = (x[0], x[1], x[2], x[3]);
        let s = self.sigma;
        let mut h = DMatrix::zeros(4, 4);
        h[(0, 0)] = 3.0 * a * a - 1.0 + 2.0 * s;
        h[(0, 2)] = -s;
        h[(2, 0)] = -s;
        h[(0, 3)] = -s;
        h[(3, 0)] = -s;
        h[(1, 1)] = 1.0;
        h[(2, 2)] = s;
        h[(3, 3)] = s;
        let w = 0.2 * (c - d).cos() * nu[0];
        h[(1, 1)] -= nu[0] * b.sin();
        h[(2, 2)] += w;
        h[(3, 3)] += w;
        h[(2, 3)] -= w;
        h[(3, 2)] -= w;
        h[(0, 0)] += 2.0 * mu[0];
        h[(1, 1)] += 2.0 * mu[0];
        h
    }
}

pub const P2_AGENTS: usize = 4;

pub fn p2_problem() -> PartitionedNlp {
    let thetas = [0.1, -0.05, 0.15, 0.0];
    let betas = [0.3, -0.2, 0.5, 0.1];
    let taus = [0.2, -0.1, 0.3, 0.0];
    let s = P2_AGENTS;
    // Rows 2i and 2i+1: a_i copied by agent i-1 (as c) and agent i+1 (as d).
    let n_c = 2 * s;
    let mut parts: Vec<(Arc<dyn SubsystemFunctions>, DMatrix<f64>)> = Vec::new();
    for i in 0..s {
        let mut e = DMatrix::zeros(n_c, 4);
        e[(2 * i, 0)] = 1.0;
        e[(2 * i + 1, 0)] = 1.0;
        let next = (i + 1) % s;
        let prev = (i + s - 1) % s;
        e[(2 * next, 2)] = -1.0;
        e[(2 * prev + 1, 3)] = -1.0;
        let agent = RingAgent {
            theta: thetas[i],
            beta: betas[i],
            sigma: 0.5,
            tau: taus[i],
        };
        parts.push((Arc::new(agent), e));
    }
    PartitionedNlp::new(parts, DVector::zeros(n_c)).expect("P2 is well formed")
}

pub fn p2_start() -> Vec<DVector<f64>> {
    let a = [0.6, 0.5, 0.4, 0.5];
    let s = P2_AGENTS;
    (0..s)
        .map(|i| DVector::from_vec(vec![a[i], 0.0, a[(i + 1) % s], a[(i + s - 1) % s]]))
        .collect()
}

fn p2() -> Result<BenchProblem, ProblemError> {
    Ok(BenchProblem {
        id: ProblemId::P2,
        problem: p2_problem(),
        x0: p2_start(),
        rho: 1.0,
    })
}

// ---------------------------------------------------------------- net3

/// Line data `(from, to, r, x)` of the three-bus triangle.
const NET3_LINES: [(usize, usize, f64, f64); 3] = [(0, 1, 0.1, 0.5), (0, 2, 0.12, 0.6), (1, 2, 0.1, 0.5)];

/// Bus data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusData {
    pub pd: f64,
    pub qd: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Cost `c2 Pg² + c1 Pg`.
    pub c2: f64,
    pub c1: f64,
}

const NET3_BUSES: [BusData; 3] = [
    BusData {
        pd: 0.0,
        qd: 0.0,
        p_min: 0.0,
        p_max: 2.0,
        q_min: -0.8,
        q_max: 0.8,
        v_min: 0.95,
        v_max: 1.05,
        c2: 0.5,
        c1: 0.2,
    },
    BusData {
        pd: 0.5,
        qd: 0.15,
        p_min: 0.0,
        p_max: 0.3,
        q_min: -0.8,
        q_max: 0.8,
        v_min: 0.95,
        v_max: 1.05,
        c2: 0.5,
        c1: 0.1,
    },
    BusData {
        pd: 0.4,
        qd: 0.1,
        p_min: 0.0,
        p_max: 0.2,
        q_min: -0.8,
        q_max: 0.8,
        v_min: 0.95,
        v_max: 1.05,
        c2: 1.0,
        c1: 0.15,
    },
];

/// Weight of the voltage-deviation and reactive-power regularization terms.
const NET3_V_WEIGHT: f64 = 1.0;
const NET3_Q_WEIGHT: f64 = 0.5;
/// Weight on every angle appearance, originals and copies alike.
const NET3_THETA_WEIGHT: f64 = 1.0;

fn admittance(n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut g = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    for &(i, j, r, x) in &NET3_LINES {
        let den = r * r + x * x;
        let (gy, by) = (r / den, -x / den);
        g[(i, i)] += gy;
        g[(j, j)] += gy;
        b[(i, i)] += by;
        b[(j, j)] += by;
        g[(i, j)] -= gy;
        g[(j, i)] -= gy;
        b[(i, j)] -= by;
        b[(j, i)] -= by;
    }
    (g, b)
}

/// Bus agent with `x = (V, θ, Pg, Qg, V_a, θ_a, V_b, θ_b)`, where `a < b`
/// are the other buses. Equalities are the active and reactive balance and,
/// on the reference bus, `θ = 0`. Inequalities are the boxes on `V`, `Pg`
/// and `Qg`.
#[derive(Debug, Clone)]
pub struct BusAgent {
    pub bus: usize,
    pub data: BusData,
    pub reference: bool,
    /// `(other bus, G_kj, B_kj)` for the two other buses.
    pub neighbors: [(usize, f64, f64); 2],
    pub g_kk: f64,
    pub b_kk: f64,
}

/// Local indices of `(V_j, θ_j)` for neighbor slot `m`.
fn slot(m: usize) -> (usize, usize) {
    (4 + 2 * m, 5 + 2 * m)
}

/// `T = V_k V_j (α cos δ + β sin δ)`, `δ = θ_k − θ_j`, with its gradient and
/// Hessian in `(V_k, θ_k, V_j, θ_j)`.
fn branch_term(vk: f64, vj: f64, delta: f64, alpha: f64, beta: f64) -> (f64, [f64; 4], [[f64; 4]; 4]) {
    let (sn, cs) = delta.sin_cos();
    let u = alpha * cs + beta * sn;
    let du = -alpha * sn + beta * cs;
    let t = vk * vj * u;
    let grad = [vj * u, vk * vj * du, vk * u, -vk * vj * du];
    let w = vk * vj * u;
    let hess = [
        [0.0, vj * du, u, -vj * du],
        [vj * du, -w, vk * du, w],
        [u, vk * du, 0.0, -vk * du],
        [-vj * du, w, -vk * du, -w],
    ];
    (t, grad, hess)
}

impl BusAgent {
    /// Injections `(P, Q)` with their gradients and Hessians in local coordinates.
    #[allow(clippy::type_complexity)]
    fn injections(&self, x: &DVector<f64>) -> ([f64; 2], [DVector<f64>; 2], [DMatrix<f64>; 2]) {
        let mut val = [0.0; 2];
        let mut grad = [DVector::zeros(8), DVector::zeros(8)];
        let mut hess = [DMatrix::zeros(8, 8), DMatrix::zeros(8, 8)];
        let v = x[0];
        val[0] = v * v * self.g_kk;
        val[1] = -v * v * self.b_kk;
        grad[0][0] = 2.0 * v * self.g_kk;
        grad[1][0] = -2.0 * v * self.b_kk;
        hess[0][(0, 0)] = 2.0 * self.g_kk;
        hess[1][(0, 0)] = -2.0 * self.b_kk;
        for (m, &(_, g, b)) in self.neighbors.iter().enumerate() {
            let (vj_i, tj_i) = slot(m);
            let idx = [0, 1, vj_i, tj_i];
            let delta = x[1] - x[tj_i];
            // P: α = G, β = B. Q: α = −B, β = G.
            for (k, (alpha, beta)) in [(g, b), (-b, g)].into_iter().enumerate() {
                let (t, gr, he) = branch_term(v, x[vj_i], delta, alpha, beta);
                val[k] += t;
                for r in 0..4 {
                    grad[k][idx[r]] += gr[r];
                    for c in 0..4 {
                        hess[k][(idx[r], idx[c])] += he[r][c];
                    }
                }
            }
        }
        (val, grad, hess)
    }
}

impl SubsystemFunctions for BusAgent {
    fn n_vars(&self) -> usize {
        8
    }
    fn n_eq(&self) -> usize {
        if self.reference {
            3
        } else {
            2
        }
    }
    fn n_ineq(&self) -> usize {
        6
    }
    fn objective(&self, x: &DVector<f64>) -> f64 {
        let d = &self.data;
        let v_dev: f64 = NET3_MAGNITUDE_COORDS.iter().map(|&c| (x[c] - 1.0).powi(2)).sum();
        let theta: f64 = NET3_ANGLE_COORDS.iter().map(|&c| x[c] * x[c]).sum();
        d.c2 * x[2] * x[2] + d.c1 * x[2] + NET3_V_WEIGHT * v_dev + NET3_THETA_WEIGHT * theta + NET3_Q_WEIGHT * x[3] * x[3]
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = &self.data;
        let mut g = DVector::zeros(8);
        for c in NET3_MAGNITUDE_COORDS {
            g[c] = 2.0 * NET3_V_WEIGHT * (x[c] - 1.0);
        }
        for c in NET3_ANGLE_COORDS {
            g[c] = 2.0 * NET3_THETA_WEIGHT * x[c];
        }
        g[2] = 2.0 * d.c2 * x[2] + d.c1;
        g[3] = 2.0 * NET3_Q_WEIGHT * x[3];
        g
    }
    fn eq_values(&self, x: &DVector<f64>) -> DVector<f64> {
        let ([p, q], _, _) = self.injections(x);
        let mut out = vec![x[2] - self.data.pd - p, x[3] - self.data.qd - q];
        if self.reference {
            out.push(x[1]);
        }
        DVector::from_vec(out)
    }
    fn eq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (_, [gp, gq], _) = self.injections(x);
        let mut j = DMatrix::zeros(self.n_eq(), 8);
        j.set_row(0, &(-gp).transpose());
        j.set_row(1, &(-gq).transpose());
        j[(0, 2)] += 1.0;
        j[(1, 3)] += 1.0;
        if self.reference {
            j[(2, 1)] = 1.0;
        }
        j
    }
    fn ineq_values(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = &self.data;
        DVector::from_vec(vec![
            x[0] - d.v_max,
            d.v_min - x[0],
            x[2] - d.p_max,
            d.p_min - x[2],
            x[3] - d.q_max,
            d.q_min - x[3],
        ])
    }
    fn ineq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(6, 8);
        for (r, col) in [0usize, 0, 2, 2, 3, 3].into_iter().enumerate() {
            j[(r, col)] = if r % 2 == 0 { 1.0 } else { -1.0 };
        }
        j
    }
    fn lagrangian_hessian(&self, x: &DVector<f64>, nu: &DVector<f64>, _mu: &DVector<f64>) -> DMatrix<f64> {
        let (_, _, [hp, hq]) = self.injections(x);
        let mut h = -(hp * nu[0] + hq * nu[1]);
        for c in NET3_MAGNITUDE_COORDS {
            h[(c, c)] += 2.0 * NET3_V_WEIGHT;
        }
        for c in NET3_ANGLE_COORDS {
            h[(c, c)] += 2.0 * NET3_THETA_WEIGHT;
        }
        h[(2, 2)] += 2.0 * self.data.c2;
        h[(3, 3)] += 2.0 * NET3_Q_WEIGHT;
        h
    }
}

pub fn net3_problem() -> PartitionedNlp {
    let n = 3;
    let (g, b) = admittance(n);
    // Row order: for each bus k, its copies of (V_a, θ_a, V_b, θ_b).
    let n_c = n * 4;
    let mut es: Vec<DMatrix<f64>> = (0..n).map(|_| DMatrix::zeros(n_c, 8)).collect();
    let mut agents = Vec::new();
    for k in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != k).collect();
        for (m, &j) in others.iter().enumerate() {
            let (vc, tc) = slot(m);
            let r = 4 * k + 2 * m;
            es[j][(r, 0)] = 1.0;
            es[k][(r, vc)] = -1.0;
            es[j][(r + 1, 1)] = 1.0;
            es[k][(r + 1, tc)] = -1.0;
        }
        agents.push(BusAgent {
            bus: k,
            data: NET3_BUSES[k],
            reference: k == 0,
            neighbors: [
                (others[0], g[(k, others[0])], b[(k, others[0])]),
                (others[1], g[(k, others[1])], b[(k, others[1])]),
            ],
            g_kk: g[(k, k)],
            b_kk: b[(k, k)],
        });
    }
    let parts = agents
        .into_iter()
        .zip(es)
        .map(|(a, e)| (Arc::new(a) as Arc<dyn SubsystemFunctions>, e))
        .collect();
    PartitionedNlp::new(parts, DVector::zeros(n_c)).expect("net3 is well formed")
}

/// Flat start: every voltage magnitude (originals and copies) at 1, the rest 0.
pub fn net3_flat_start() -> Vec<DVector<f64>> {
    (0..3)
        .map(|_| DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]))
        .collect()
}

/// Local indices holding voltage magnitudes in a net3 subsystem.
pub const NET3_MAGNITUDE_COORDS: [usize; 3] = [0, 4, 6];
/// Local indices holding voltage angles in a net3 subsystem.
pub const NET3_ANGLE_COORDS: [usize; 3] = [1, 5, 7];

fn net3() -> Result<BenchProblem, ProblemError> {
    Ok(BenchProblem {
        id: ProblemId::Net3,
        problem: net3_problem(),
        x0: net3_flat_start(),
        rho: 10.0,
    })
}

// ---------------------------------------------------------------- custom

/// Seeded chain of `subsystems` strongly convex quadratic agents with `n`
/// variables each. Agent `i` copies coordinate 0 of agent `i + 1` into its
/// last coordinate. Each agent has one linear equality and two linear
/// inequalities, feasible by construction; the start is the feasible anchor.
pub fn custom(seed: u64, subsystems: usize, n: usize) -> Result<BenchProblem, ProblemError> {
    assert!(n >= 2 && subsystems >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_c = subsystems - 1;
    // Jointly feasible anchors: the copy coordinate matches its original.
    let mut anchors: Vec<DVector<f64>> = (0..subsystems)
        .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5)))
        .collect();
    for i in 0..n_c {
        anchors[i][n - 1] = anchors[i + 1][0];
    }
    let mut parts: Vec<(Arc<dyn SubsystemFunctions>, DMatrix<f64>)> = Vec::new();
    for (i, anchor) in anchors.iter().enumerate() {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q_mat = &m * m.transpose() + DMatrix::identity(n, n);
        let q = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let a = DMatrix::from_fn(1, n, |_, _| rng.random_range(-1.0..1.0));
        let b = -(&a * anchor);
        let c = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
        let slack = DVector::from_fn(2, |_, _| rng.random_range(0.1..1.0));
        let d = -(&c * anchor) - slack;
        let mut e = DMatrix::zeros(n_c, n);
        if i + 1 < subsystems {
            e[(i, n - 1)] = -1.0;
        }
        if i > 0 {
            e[(i - 1, 0)] = 1.0;
        }
        parts.push((Arc::new(QuadraticSubsystem { q_mat, q, a, b, c, d }), e));
    }
    let problem = PartitionedNlp::new(parts, DVector::zeros(n_c))?;
    Ok(BenchProblem {
        id: ProblemId::Custom,
        problem,
        x0: anchors,
        rho: 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p1_shape() {
        let b = load_problem(ProblemId::P1, 0).unwrap();
        assert_eq!(b.problem.n_vars_total(), 4);
        assert_eq!(b.problem.n_coupling(), 1);
        assert!(b.problem.is_consensus());
        assert_eq!(b.problem.coupling_residual(&b.x0).amax(), 0.0);
    }

    #[test]
    fn p2_ring_is_consensus_with_stars() {
        let b = load_problem(ProblemId::P2, 0).unwrap();
        let map = b.problem.consensus.as_ref().unwrap();
        assert_eq!(map.pairs.len(), 8);
        assert_eq!(map.groups.len(), 4);
        assert!(map.groups.iter().all(|g| g.copies.len() == 2));
        assert_eq!(b.problem.coupling_residual(&b.x0).amax(), 0.0);
    }

    #[test]
    fn net3_starts_flat() {
        let b = load_problem(ProblemId::Net3, 0).unwrap();
        assert!(b.problem.is_consensus());
        assert_eq!(b.problem.n_coupling(), 12);
        for x in &b.x0 {
            for k in 0..8 {
                let expected = if NET3_MAGNITUDE_COORDS.contains(&k) { 1.0 } else { 0.0 };
                assert_eq!(x[k], expected);
            }
        }
        assert_eq!(b.problem.coupling_residual(&b.x0).amax(), 0.0);
    }

    #[test]
    fn flat_network_has_zero_injections() {
        let p = net3_problem();
        let x = net3_flat_start();
        for (s, xi) in p.subsystems.iter().zip(&x) {
            let g = s.functions.eq_values(xi);
            // Only the demand remains.
            assert!(g[0].abs() <= 0.9 + 1e-12);
        }
    }

    #[test]
    fn custom_is_seed_deterministic() {
        let a = custom(3, 3, 3).unwrap();
        let b = custom(3, 3, 3).unwrap();
        let x = vec![DVector::from_element(3, 0.3); 3];
        assert_eq!(a.problem.objective(&x), b.problem.objective(&x));
        assert!(a.problem.is_consensus());
    }

    #[test]
    fn ids_parse() {
        assert_eq!("net3".parse::<ProblemId>().unwrap(), ProblemId::Net3);
        assert!("P9".parse::<ProblemId>().is_err());
    }
}
