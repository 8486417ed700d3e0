//! Small dense linear-algebra helpers shared by the model, QP and residual code.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

/// Infinity norm of a vector, `0.0` for empty vectors.
pub fn norm_inf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Infinity norm over a list of blocks.
pub fn blocks_norm_inf(blocks: &[DVector<f64>]) -> f64 {
    blocks.iter().map(norm_inf).fold(0.0, f64::max)
}

pub fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn all_finite_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Orthonormal basis of the null space of a (row-major constraint) matrix `g`.
#[derive(Debug, Clone)]
pub struct NullSpace {
    /// `n x (n - rank)` matrix with orthonormal columns spanning `{v : g v = 0}`.
    pub basis: DMatrix<f64>,
    pub rank: usize,
    /// Singular values of `g`, sorted in descending order.
    pub singular_values: Vec<f64>,
    pub tolerance: f64,
}

impl NullSpace {
    pub fn full_row_rank(&self, rows: usize) -> bool {
        self.rank == rows
    }
}

/// Rank-revealing null-space computation through the SVD of `gᵀ`.
///
/// `gᵀ` is padded with zero columns to a square matrix so that the left
/// singular vectors form a complete basis of `R^n`; the ones belonging to
/// zero singular values span `null(g)`. Rank tolerance is
/// `max(m, n) * eps * sigma_max`.
pub fn null_space(g: &DMatrix<f64>) -> NullSpace {
    let (m, n) = g.shape();
    if m == 0 || n == 0 {
        return NullSpace {
            basis: DMatrix::identity(n, n),
            rank: 0,
            singular_values: Vec::new(),
            tolerance: 0.0,
        };
    }
    let cols = m.max(n);
    let mut padded = DMatrix::zeros(n, cols);
    padded.view_mut((0, 0), (n, m)).copy_from(&g.transpose());
    let svd = SVD::new(padded, true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let sorted: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let sigma_max = sorted.first().copied().unwrap_or(0.0);
    let tolerance = (m.max(n) as f64) * f64::EPSILON * sigma_max;
    let rank = sorted.iter().filter(|&&s| s > tolerance).count().min(m);
    // U is n x min(n, cols) = n x n.
    let null_cols: Vec<usize> = order.iter().skip(rank).copied().take(n - rank).collect();
    let mut basis = DMatrix::zeros(n, null_cols.len());
    for (dst, &src) in null_cols.iter().enumerate() {
        basis.set_column(dst, &u.column(src));
    }
    let singular_values = sorted.into_iter().take(m.min(n)).collect();
    NullSpace {
        basis,
        rank,
        singular_values,
        tolerance,
    }
}

/// Smallest singular value of `a`; zero when `a` has more rows than columns.
pub fn min_singular_value(a: &DMatrix<f64>) -> f64 {
    let (m, n) = a.shape();
    if m == 0 {
        return f64::INFINITY;
    }
    if m > n || n == 0 {
        return 0.0;
    }
    let svd = SVD::new(a.clone(), false, false);
    svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted ascending.
pub fn sorted_symmetric_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .partial_cmp(&eig.eigenvalues[j])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn symmetrize(h: &DMatrix<f64>) -> DMatrix<f64> {
    (h + h.transpose()) * 0.5
}

/// Relative asymmetry `max|H - Hᵀ| / max(1, max|H|)`.
pub fn relative_asymmetry(h: &DMatrix<f64>) -> f64 {
    let scale = h.iter().fold(1.0_f64, |acc, x| acc.max(x.abs()));
    let diff = (h - h.transpose()).amax();
    diff / scale
}

/// Block-diagonal assembly.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn concat(blocks: &[DVector<f64>]) -> DVector<f64> {
    let n: usize = blocks.iter().map(|b| b.len()).sum();
    DVector::from_iterator(n, blocks.iter().flat_map(|b| b.iter().copied()))
}

/// Splits `v` into consecutive blocks with the given lengths.
pub fn split(v: &DVector<f64>, lens: &[usize]) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(lens.len());
    let mut offset = 0;
    for &len in lens {
        out.push(v.rows(offset, len).into_owned());
        offset += len;
    }
    out
}

/// Dense LU solve with a relative pivot test and one step of iterative refinement.
///
/// Returns `None` when the matrix is numerically singular.
pub fn solve_square(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Some(DVector::zeros(0));
    }
    let lu = a.clone().full_piv_lu();
    let u = lu.u();
    let diag_max = (0..n).map(|i| u[(i, i)].abs()).fold(0.0_f64, f64::max);
    let diag_min = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if diag_max == 0.0 || diag_min <= (n as f64) * f64::EPSILON * diag_max {
        return None;
    }
    let mut x = lu.solve(b)?;
    let r = b - a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    Some(x)
}
