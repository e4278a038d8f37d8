//! Small dense linear-algebra helpers shared by the solvers.
//!
//! Matrices are `ndarray` arrays throughout; nalgebra is used only for the
//! singular value decomposition.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

pub(crate) fn to_nalgebra(a: ArrayView2<f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Thin SVD `a = U diag(s) Vᵀ` with singular values in descending order.
///
/// `U` is `m×r`, `V` is `n×r` with `r = min(m, n)`.
pub fn thin_svd(a: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("svd", "non-finite input"));
    }
    let svd = to_nalgebra(a).svd(true, true);
    let u = svd
        .u
        .as_ref()
        .ok_or_else(|| Error::numeric("svd", "left singular vectors unavailable"))?;
    let vt = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::numeric("svd", "right singular vectors unavailable"))?;
    let r = svd.singular_values.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let (m, n) = a.dim();
    let mut uu = Array2::zeros((m, r));
    let mut vv = Array2::zeros((n, r));
    let mut s = Array1::zeros(r);
    for (k, &src) in order.iter().enumerate() {
        s[k] = svd.singular_values[src];
        for i in 0..m {
            uu[[i, k]] = u[(i, src)];
        }
        for j in 0..n {
            vv[[j, k]] = vt[(src, j)];
        }
    }
    Ok((uu, s, vv))
}

pub fn frobenius(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn max_abs(a: ArrayView2<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Sum of column Euclidean norms.
pub fn l21_norm(a: ArrayView2<f64>) -> f64 {
    a.axis_iter(Axis(1))
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum()
}

/// Sum over rows of the row-wise max absolute value.
pub fn l1inf_norm(a: ArrayView2<f64>) -> f64 {
    a.axis_iter(Axis(0))
        .map(|r| r.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
        .sum()
}

pub(crate) fn ensure_finite(a: ArrayView2<f64>, step: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(step, "non-finite entry in iterate"))
    }
}

/// Inverse of a small symmetric positive definite matrix.
pub(crate) fn spd_inverse(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let chol = to_nalgebra(a)
        .cholesky()
        .ok_or_else(|| Error::numeric("update_F", "GᵀG is singular"))?;
    Ok(from_nalgebra(&chol.inverse()))
}
