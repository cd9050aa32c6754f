use nalgebra::{DMatrix, DVector};

use super::{center, check_xy, LinearModel};
use crate::error::Result;
use crate::linalg::sym_pinv_solve;
use crate::scalar::Real;

/// Least squares with an unpenalised intercept. The centred normal equations
/// are solved with a pseudo-inverse, so rank-deficient designs are fine.
pub fn ols_fit<T: Real>(x: &DMatrix<T>, y: &DVector<T>) -> Result<LinearModel<T>> {
    check_xy(x, y)?;
    let (means, xc, y_mean, yc) = center(x, y);
    let gram = xc.tr_mul(&xc);
    let rhs = xc.tr_mul(&yc);
    let rtol = T::machine_epsilon() * T::from_usize_lossy(10 * x.ncols().max(1));
    let w = sym_pinv_solve(&gram, &rhs, rtol)?;
    let b = y_mean - means.dot(&w);
    Ok(LinearModel::new(w, b))
}
