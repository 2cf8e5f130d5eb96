//! Small dense-matrix helpers shared across the crate.
//!
//! Stacked matrices follow the convention `[X-block; ZX-block]`: the first
//! `p` rows hold the p×p X-block, the remaining `m` rows the m×p ZX-block.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// (a + aᵀ)/2.
pub fn symmetrized(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Max |a_ij − a_ji|.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Frobenius norm of the difference.
pub fn frob_dist(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}

/// Entrywise absolute sum.
pub fn l1_norm(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

/// Largest entry in magnitude.
pub fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Sum of singular values.
pub fn nuclear_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().singular_values().iter().sum()
}

/// Largest singular value (0 for empty matrices).
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().singular_values().max()
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> DVector<f64> {
    let mut ev: Vec<f64> = a.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    DVector::from_vec(ev)
}

/// Smallest eigenvalue of a symmetric matrix; +inf for the empty matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return f64::INFINITY;
    }
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &v| acc.min(v))
}

/// log det of a PD matrix via Cholesky.
pub fn logdet_pd(a: &DMatrix<f64>, what: &'static str) -> Result<f64> {
    if a.is_empty() {
        return Ok(0.0);
    }
    let chol = a
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite(what))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Stack an X-block (p×p) on top of a ZX-block (m×p).
pub fn stack(x_block: &DMatrix<f64>, zx_block: &DMatrix<f64>) -> DMatrix<f64> {
    let p = x_block.ncols();
    let m = zx_block.nrows();
    assert_eq!(x_block.nrows(), p, "X-block must be square");
    assert_eq!(zx_block.ncols(), p, "ZX-block column count must match p");
    let mut out = DMatrix::<f64>::zeros(p + m, p);
    out.view_mut((0, 0), (p, p)).copy_from(x_block);
    if m > 0 {
        out.view_mut((p, 0), (m, p)).copy_from(zx_block);
    }
    out
}

/// Split a stacked (p+m)×p matrix back into its (X, ZX) blocks.
pub fn split(stacked: &DMatrix<f64>, p: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = stacked.nrows() - p;
    let x = stacked.view((0, 0), (p, p)).into_owned();
    let zx = stacked.view((p, 0), (m, p)).into_owned();
    (x, zx)
}

/// Count of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().singular_values();
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Row-major nested vectors, the JSON/CSV interchange shape.
pub fn to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

/// Rebuild a matrix from row-major nested vectors. Ragged input is rejected.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::DimensionMismatch(format!(
                "row {i} has {} entries, expected {ncols}",
                r.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn stack_split_roundtrip() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 5.0]);
        let zx = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let s = stack(&x, &zx);
        assert_eq!(s.nrows(), 5);
        let (x2, zx2) = split(&s, 2);
        assert_eq!(x, x2);
        assert_eq!(zx, zx2);
    }

    #[test]
    fn nuclear_norm_of_rank_one() {
        let u = DVector::from_vec(vec![3.0, 4.0]);
        let v = DVector::from_vec(vec![1.0, 0.0]);
        let a = &u * v.transpose(); // singular value 5
        assert_relative_eq!(nuclear_norm(&a), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn logdet_matches_scalar() {
        let a = DMatrix::from_row_slice(1, 1, &[2.0]);
        assert_relative_eq!(logdet_pd(&a, "a").unwrap(), 2.0f64.ln(), epsilon = 1e-15);
        let bad = DMatrix::from_row_slice(1, 1, &[-1.0]);
        assert!(logdet_pd(&bad, "bad").is_err());
    }

    #[test]
    fn empty_matrix_norms() {
        let e = DMatrix::<f64>::zeros(0, 3);
        assert_eq!(nuclear_norm(&e), 0.0);
        assert_eq!(spectral_norm(&e), 0.0);
        assert_eq!(numerical_rank(&e, 1e-8), 0);
    }
}
