//! Dense symmetric helpers built on nalgebra's eigendecomposition.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative eigenvalue cutoff used by every pseudo-inverse in the kernel code.
pub const PINV_RTOL: f64 = 1e-10;

fn check_finite<T: Real>(a: &DMatrix<T>, what: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Eigendecomposition of a symmetric matrix, symmetrising first.
pub(crate) fn sym_eigen<T: Real>(a: &DMatrix<T>) -> Result<SymmetricEigen<T, nalgebra::Dyn>> {
    if a.nrows() != a.ncols() {
        return Err(Error::dims(format!(
            "expected square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    check_finite(a, "symmetric system")?;
    let half = T::lit(0.5);
    let sym = (a + a.transpose()) * half;
    Ok(SymmetricEigen::new(sym))
}

fn spectral_map<T: Real>(
    eig: &SymmetricEigen<T, nalgebra::Dyn>,
    rtol: T,
    f: impl Fn(T) -> T,
) -> DMatrix<T> {
    let max_abs = eig
        .eigenvalues
        .iter()
        .fold(T::zero(), |acc, &e| acc.max(e.abs()));
    let cutoff = rtol * max_abs;
    let mapped: DVector<T> = eig.eigenvalues.map(|e| {
        if max_abs > T::zero() && e.abs() > cutoff {
            f(e)
        } else {
            T::zero()
        }
    });
    let u = &eig.eigenvectors;
    let mut scaled = u.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= mapped[j];
    }
    scaled * u.transpose()
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix; eigenvalues with
/// `|e| <= rtol * max|e|` are treated as zero.
pub fn sym_pinv<T: Real>(a: &DMatrix<T>, rtol: T) -> Result<DMatrix<T>> {
    let eig = sym_eigen(a)?;
    Ok(spectral_map(&eig, rtol, |e| T::one() / e))
}

/// Pseudo-inverse square root `A^{-1/2}` of a symmetric positive semi-definite
/// matrix, dropping eigenvalues at or below `rtol * max`.
pub fn sym_inv_sqrt<T: Real>(a: &DMatrix<T>, rtol: T) -> Result<DMatrix<T>> {
    let eig = sym_eigen(a)?;
    let max = eig.eigenvalues.iter().fold(T::zero(), |acc, &e| acc.max(e));
    let cutoff = rtol * max;
    let mapped: DVector<T> = eig.eigenvalues.map(|e| {
        if max > T::zero() && e > cutoff {
            T::one() / e.sqrt()
        } else {
            T::zero()
        }
    });
    let u = &eig.eigenvectors;
    let mut scaled = u.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= mapped[j];
    }
    Ok(scaled * u.transpose())
}

/// Solves `A x = b` for symmetric `A` with the thresholded pseudo-inverse.
pub fn sym_pinv_solve<T: Real>(a: &DMatrix<T>, b: &DVector<T>, rtol: T) -> Result<DVector<T>> {
    if a.nrows() != b.len() {
        return Err(Error::dims(format!(
            "system of order {} with right-hand side of length {}",
            a.nrows(),
            b.len()
        )));
    }
    Ok(sym_pinv(a, rtol)? * b)
}

/// Pairwise squared Euclidean distances between the rows of `a` and `b`.
pub fn squared_distances<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    if a.ncols() != b.ncols() {
        return Err(Error::dims(format!(
            "row dimension {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (n, p, d) = (a.nrows(), b.nrows(), a.ncols());
    let mut out = DMatrix::<T>::zeros(n, p);
    for j in 0..p {
        let mut col = out.column_mut(j);
        for k in 0..d {
            let bk = b[(j, k)];
            let ak = a.column(k);
            for i in 0..n {
                let diff = ak[i] - bk;
                col[i] += diff * diff;
            }
        }
    }
    Ok(out)
}

/// Copies the listed rows of `m` into a new matrix.
pub fn select_rows<T: Real>(m: &DMatrix<T>, rows: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Copies the listed columns of `m` into a new matrix.
pub fn select_columns<T: Real>(m: &DMatrix<T>, cols: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}
