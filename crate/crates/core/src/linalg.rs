//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigendecomposition of a symmetric matrix, eigenvalues in descending
/// order with matching eigenvector columns.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym
        .try_symmetric_eigen(f64::EPSILON, 10_000 * n.max(10))
        .ok_or(Error::EigenFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// `V f(Λ) Vᵀ` for a symmetric matrix.
pub fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = symmetric_eigen(m)?;
    Ok(reconstruct(&values.iter().map(|&v| f(v)).collect::<Vec<_>>(), &vectors))
}

pub(crate) fn reconstruct(values: &[f64], vectors: &DMatrix<f64>) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |r, c| vectors[(r, c)] * values[c]);
    let out = scaled * vectors.transpose();
    (&out + out.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    Ok(symmetric_eigen(m)?.0.last().copied().unwrap_or(0.0))
}

/// Numerical PSD test: smallest eigenvalue at least `-rel_tol * trace`.
pub fn is_numerically_psd(m: &DMatrix<f64>, rel_tol: f64) -> Result<bool> {
    let trace = m.trace().abs();
    Ok(min_eigenvalue(m)? >= -rel_tol * trace)
}

/// Row-major samples (n x d) to column means.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Rows of `x` selected by index, in the given order.
pub fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |r, c| x[(rows[r], c)])
}

pub fn select_columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len(), |r, c| x[(r, cols[c])])
}

/// Sub-matrix `m[rows, cols]`.
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

/// Builds an `n x d` matrix from equal-length rows.
pub fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c])
}

/// Median of a slice (mean of the two central values for even lengths).
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, -1.0]);
        let (vals, vecs) = symmetric_eigen(&m).unwrap();
        assert_eq!(vals, vec![5.0, 2.0, -1.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-12);
        let back = reconstruct(&vals, &vecs);
        assert!((back - m).abs().max() < 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
