//! Minimum-norm least squares via SVD, with a relative numerical-rank cutoff.

use faer::linalg::solvers::Svd;
use faer::{Mat, MatRef};
use ndarray::Array2;

/// Singular values at or below `RANK_RTOL * sigma_max` count as zero.
pub const RANK_RTOL: f64 = 1e-8;

pub(crate) fn to_mat(a: &Array2<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |r, c| a[[r, c]])
}

pub(crate) fn from_mat(m: MatRef<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(r, c)| m[(r, c)])
}

#[derive(Debug, Clone)]
pub struct LstsqSolution {
    /// Minimum-norm minimiser of `||A X - B||_F`, one column per right-hand side.
    pub x: Array2<f64>,
    pub rank: usize,
    /// Frobenius norm of `A X - B`.
    pub residual: f64,
}

fn cutoff(singular_values: &[f64]) -> f64 {
    let smax = singular_values.iter().cloned().fold(0.0, f64::max);
    RANK_RTOL * smax
}

struct Thin {
    u: Mat<f64>,
    s: Vec<f64>,
    v: Mat<f64>,
}

fn thin_svd(a: &Mat<f64>) -> Thin {
    let svd: Svd<f64> = a.thin_svd().expect("SVD failed to converge");
    let s = svd.S().column_vector();
    Thin {
        u: svd.U().to_owned(),
        s: (0..s.nrows()).map(|i| s[i]).collect(),
        v: svd.V().to_owned(),
    }
}

/// Numerical rank of `a` with tolerance `RANK_RTOL * sigma_max`.
pub fn numerical_rank(a: &Array2<f64>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = to_mat(a)
        .singular_values()
        .expect("SVD failed to converge");
    let tol = cutoff(&sv);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Solve `A X = B` in the minimum-norm least-squares sense for every column
/// of `B` at once.
pub fn min_norm_lstsq(a: &Array2<f64>, b: &Array2<f64>) -> LstsqSolution {
    assert_eq!(a.nrows(), b.nrows(), "A and B must have the same row count");
    let am = to_mat(a);
    let bm = to_mat(b);
    if a.is_empty() {
        return LstsqSolution {
            x: Array2::zeros((a.ncols(), b.ncols())),
            rank: 0,
            residual: bm.norm_l2(),
        };
    }
    let svd = thin_svd(&am);
    let tol = cutoff(&svd.s);
    let rank = svd.s.iter().filter(|&&s| s > tol).count();
    // Singular values strictly above `tol` are inverted.
    let mut utb = svd.u.transpose() * &bm;
    for (i, &s) in svd.s.iter().enumerate() {
        let inv = if s > tol { 1.0 / s } else { 0.0 };
        for c in 0..utb.ncols() {
            utb[(i, c)] *= inv;
        }
    }
    let x = &svd.v * &utb;
    let residual = (&am * &x - &bm).norm_l2();
    LstsqSolution {
        x: from_mat(x.as_ref()),
        rank,
        residual,
    }
}

/// Orthonormal basis (as columns) of the column span of `a`.
pub fn column_basis(a: &Array2<f64>) -> Array2<f64> {
    if a.is_empty() {
        return Array2::zeros((a.nrows(), 0));
    }
    let svd = thin_svd(&to_mat(a));
    let tol = cutoff(&svd.s);
    let keep: Vec<usize> = svd
        .s
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > tol && s > 0.0)
        .map(|(i, _)| i)
        .collect();
    Array2::from_shape_fn((a.nrows(), keep.len()), |(r, c)| svd.u[(r, keep[c])])
}
