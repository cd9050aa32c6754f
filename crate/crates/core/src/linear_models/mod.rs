//! Linear regressors: closed-form OLS, forward stepwise selection, LASSO by
//! coordinate descent, and LASSO-based variable importance.

mod lasso;
mod ols;
mod scores;
mod stepwise;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use lasso::{lasso_fit, LassoOptions, LassoProblem};
pub use ols::ols_fit;
pub use scores::{lasso_variable_scores, LassoScoreInput, VariableScore, VariableScoreTable};
pub use stepwise::{forward_stepwise_fit, forward_stepwise_path, StepwisePath};

#[derive(Clone, Debug, PartialEq)]
pub struct Convergence {
    pub converged: bool,
    pub sweeps: usize,
    pub max_change: f64,
    pub kkt_violation: f64,
}

/// `y = w^T x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel<T: Real> {
    pub weights: DVector<T>,
    pub intercept: T,
    /// Columns in the order a stepwise fit selected them.
    pub selected: Option<Vec<usize>>,
    pub lambda: Option<T>,
    pub convergence: Option<Convergence>,
}

impl<T: Real> LinearModel<T> {
    pub fn new(weights: DVector<T>, intercept: T) -> Self {
        Self {
            weights,
            intercept,
            selected: None,
            lambda: None,
            convergence: None,
        }
    }

    pub fn n_features(&self) -> usize {
        self.weights.len()
    }
}

pub fn linear_predict<T: Real>(model: &LinearModel<T>, x: &DMatrix<T>) -> Result<DVector<T>> {
    if x.ncols() != model.n_features() {
        return Err(Error::dims(format!(
            "model has {} weights, input has {} columns",
            model.n_features(),
            x.ncols()
        )));
    }
    let mut out = x * &model.weights;
    out.add_scalar_mut(model.intercept);
    Ok(out)
}

pub(crate) fn check_xy<T: Real>(x: &DMatrix<T>, y: &DVector<T>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::dims(format!(
            "{} rows in X but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::Empty("no training rows".into()));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("design matrix"));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("targets"));
    }
    Ok(())
}

/// Column means, column-centred copy of `x`, mean of `y`, centred `y`.
pub(crate) fn center<T: Real>(x: &DMatrix<T>, y: &DVector<T>) -> (DVector<T>, DMatrix<T>, T, DVector<T>) {
    let n = T::from_usize_lossy(x.nrows());
    let means = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n));
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let y_mean = y.sum() / n;
    let yc = y.add_scalar(-y_mean);
    (means, xc, y_mean, yc)
}
