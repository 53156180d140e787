//! Small dense linear-algebra helpers shared by the online factorizations.

use nalgebra::{DMatrix, DVector};

use crate::error::{CpdError, Result};

/// Thin QR with a deterministic sign convention: the diagonal of `R` is
/// nonnegative. Requires `a.nrows() >= a.ncols()`.
pub fn thin_qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    debug_assert!(a.nrows() >= a.ncols());
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..r.nrows() {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    (q, r)
}

/// Largest absolute entry of `UᵀU − I`.
pub fn orthogonality_error_max(u: &DMatrix<f64>) -> f64 {
    let g = u.tr_mul(u);
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Frobenius norm of `UᵀU − I`.
pub fn orthogonality_error_fro(u: &DMatrix<f64>) -> f64 {
    let g = u.tr_mul(u) - DMatrix::identity(u.ncols(), u.ncols());
    g.norm()
}

/// Largest principal angle (radians) between the column spans of two
/// column-orthonormal matrices of equal width.
///
/// Computed through the sine, `‖(I − AAᵀ)B‖₂`, which stays accurate for
/// tiny angles where `acos` of the cosines would round to zero.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.nrows(), b.nrows(), "bases live in different spaces");
    let resid = b - a * a.tr_mul(b);
    let s = singular_values(&resid).first().copied().unwrap_or(0.0);
    s.min(1.0).asin()
}

/// Horizontal concatenation `[a | b]`.
pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((0, a.ncols()), (b.nrows(), b.ncols()))
        .copy_from(b);
    out
}

/// Vertical concatenation `[a; b]`.
pub fn vstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols());
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((a.nrows(), 0), (b.nrows(), b.ncols()))
        .copy_from(b);
    out
}

/// Builds a matrix from column vectors of equal length.
pub fn from_columns(rows: usize, cols: &[&DVector<f64>]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    out
}

/// Replaces `m` by `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub(crate) fn to_faer(x: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)])
}

/// Truncated batch SVD with singular values sorted descending.
///
/// Returns `(U, σ, V)` with `U: m×r`, `σ: r`, `V: n×r`.
pub fn truncated_svd(
    x: &DMatrix<f64>,
    rank: usize,
) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let (m, n) = x.shape();
    let r = rank.min(m.min(n));
    if r == 0 {
        return Ok((DMatrix::zeros(m, 0), DVector::zeros(0), DMatrix::zeros(n, 0)));
    }
    let svd = to_faer(x)
        .thin_svd()
        .map_err(|e| CpdError::numerical(format!("SVD did not converge: {e:?}"), f64::INFINITY))?;
    let (fu, fs, fv) = (svd.U(), svd.S().column_vector(), svd.V());
    let mut order: Vec<usize> = (0..fs.nrows()).collect();
    order.sort_by(|&a, &b| fs[b].partial_cmp(&fs[a]).unwrap_or(std::cmp::Ordering::Equal));
    order.truncate(r);
    let u = DMatrix::from_fn(m, r, |i, j| fu[(i, order[j])]);
    let s = DVector::from_fn(r, |j, _| fs[order[j]]);
    let v = DMatrix::from_fn(n, r, |i, j| fv[(i, order[j])]);
    Ok((u, s, v))
}

/// Singular values sorted descending; empty if the decomposition fails.
pub fn singular_values(x: &DMatrix<f64>) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let mut sv = to_faer(x).singular_values().unwrap_or_default();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Ratio of extreme singular values, `∞` for singular input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&max), Some(&min)) if min > 0.0 => max / min,
        _ => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_has_nonnegative_diagonal() {
        let a = DMatrix::from_row_slice(3, 2, &[-1.0, 2.0, 0.5, -3.0, 2.0, 1.0]);
        let (q, r) = thin_qr(&a);
        for i in 0..2 {
            assert!(r[(i, i)] >= 0.0);
        }
        assert!((q * r - a).norm() < 1e-12);
    }

    #[test]
    fn principal_angle_of_rotated_plane() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
        let t = 1e-9f64;
        let b = DMatrix::from_row_slice(3, 1, &[t.cos(), t.sin(), 0.0]);
        let ang = max_principal_angle(&a, &b);
        assert!((ang - t).abs() < 1e-15);
    }
}
