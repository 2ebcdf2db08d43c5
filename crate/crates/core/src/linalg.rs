//! Dense decompositions backed by faer; nalgebra matrices at the boundary.

use faer::Mat;
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

fn to_faer(a: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Minimum-norm least-squares solution of `a * x = b` through a truncated
/// SVD: singular values at or below `rcond * sigma_max` are discarded.
pub(crate) struct TruncatedLstsq {
    pub x: DMatrix<f64>,
    pub rank: usize,
    pub sigma_max: f64,
}

pub(crate) fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, rcond: f64) -> Result<TruncatedLstsq> {
    assert_eq!(a.nrows(), b.nrows());
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Ok(TruncatedLstsq {
            x: DMatrix::zeros(cols, b.ncols()),
            rank: 0,
            sigma_max: 0.0,
        });
    }
    let svd = to_faer(a)
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let (u, v) = (svd.U(), svd.V());
    let s = svd.S().column_vector();
    let k = rows.min(cols);
    let sigma_max = (0..k).map(|i| s[i]).fold(0.0, f64::max);
    let cutoff = rcond * sigma_max;
    let mut x = DMatrix::zeros(cols, b.ncols());
    let mut rank = 0;
    for i in 0..k {
        let sigma = s[i];
        if sigma <= cutoff || sigma == 0.0 {
            continue;
        }
        rank += 1;
        for r in 0..b.ncols() {
            let coef = (0..rows).map(|t| u[(t, i)] * b[(t, r)]).sum::<f64>() / sigma;
            for c in 0..cols {
                x[(c, r)] += v[(c, i)] * coef;
            }
        }
    }
    Ok(TruncatedLstsq { x, rank, sigma_max })
}

/// Singular values, largest first.
pub(crate) fn singular_values(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    to_faer(a)
        .singular_values()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))
}

/// Ratio of largest to smallest singular value; infinite when the matrix
/// has fewer rows than columns or a zero singular value.
pub(crate) fn condition_number(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() < a.ncols() {
        return Ok(f64::INFINITY);
    }
    let s = singular_values(a)?;
    let max = s.first().copied().unwrap_or(0.0);
    let min = s.last().copied().unwrap_or(0.0);
    Ok(if min == 0.0 { f64::INFINITY } else { max / min })
}

/// Eigenvalues of a real square matrix.
pub(crate) fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    to_faer(a)
        .eigenvalues()
        .map_err(|e| Error::Numerical(format!("eigen-solver did not converge: {e:?}")))
}
