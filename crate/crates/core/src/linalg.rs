//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::scalar::{lit, Real};

/// Operator (spectral) norm via the largest singular value.
pub fn op_norm<S: Real>(m: &DMatrix<S>) -> S {
    if m.nrows() == 0 || m.ncols() == 0 {
        return S::zero();
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(S::zero(), |a, b| a.max(b))
}

/// Singular values sorted in decreasing order.
pub fn singular_values_desc<S: Real>(m: &DMatrix<S>) -> Vec<S> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<S> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Numerical rank: number of singular values above `rel_tol * sigma_max`.
pub fn rank<S: Real>(m: &DMatrix<S>, rel_tol: f64) -> usize {
    let sv = singular_values_desc(m);
    let Some(&smax) = sv.first() else { return 0 };
    if smax <= S::zero() {
        return 0;
    }
    let cut = smax * lit::<S>(rel_tol);
    sv.iter().filter(|&&s| s > cut).count()
}

/// Right pseudo-inverse `h^T (h h^T)^{-1}` of a wide matrix with full row
/// rank, from a Householder QR of `h^T` so the Gram matrix is never formed.
/// Returns `None` when `h` is tall or `R` has a zero pivot.
pub fn right_pinv<S: Real>(h: &DMatrix<S>) -> Option<DMatrix<S>> {
    let (r, c) = h.shape();
    if r > c {
        return None;
    }
    let qr = h.transpose().qr();
    let r_inv_t = qr.r().transpose().solve_lower_triangular(&DMatrix::identity(r, r))?;
    Some(qr.q() * r_inv_t)
}

/// Stack a slice of vectors into one column vector.
pub fn stack<S: Real>(parts: &[DVector<S>]) -> DVector<S> {
    let len: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut off = 0;
    for p in parts {
        out.rows_mut(off, p.len()).copy_from(p);
        off += p.len();
    }
    out
}

/// Split a stacked vector into `count` consecutive blocks of size `dim`.
pub fn unstack<S: Real>(v: &DVector<S>, dim: usize) -> Vec<DVector<S>> {
    assert!(dim > 0 && v.len().is_multiple_of(dim), "unstack: length not a multiple of block size");
    (0..v.len() / dim)
        .map(|k| v.rows(k * dim, dim).into_owned())
        .collect()
}

/// Integer matrix power by repeated multiplication.
pub fn mat_pow<S: Real>(a: &DMatrix<S>, k: usize) -> DMatrix<S> {
    let mut out = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..k {
        out = &out * a;
    }
    out
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff<S: Real>(a: &DMatrix<S>, b: &DMatrix<S>) -> S {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .fold(S::zero(), |acc, (x, y)| acc.max((*x - *y).abs()))
}
