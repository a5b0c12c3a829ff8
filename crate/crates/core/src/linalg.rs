//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Lower-triangular `L` with `L L^T = a` for a symmetric positive-semidefinite
/// matrix. Falls back to a clipped eigendecomposition when Cholesky fails, so
/// degenerate (rank deficient) covariances still yield a valid factor.
pub fn symmetric_factor(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize(a);
    if let Some(chol) = sym.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
        return Err(Error::Singular("matrix is not positive semidefinite".into()));
    }
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals))
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Solves `a x = b` for symmetric positive-definite `a`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = symmetrize(a)
        .cholesky()
        .ok_or_else(|| Error::Singular("matrix is not positive definite".into()))?;
    Ok(chol.solve(b))
}

/// `X^T diag(w) X` without forming the diagonal matrix.
pub fn weighted_gram(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut scaled = x.clone();
    for mut col in scaled.column_iter_mut() {
        for (v, &wi) in col.iter_mut().zip(w) {
            *v *= wi;
        }
    }
    scaled.tr_mul(x)
}

/// Sub-matrix on the given row/column index set.
pub fn select(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| a[(idx[i], idx[j])])
}

pub fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}
