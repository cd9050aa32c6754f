use nalgebra::{DMatrix, DVector};

use super::{center, check_xy, Convergence, LinearModel};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LassoOptions {
    /// Stop once no coefficient moves by more than this in a sweep.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

/// Sufficient statistics for `(1/n) sum (w^T x + b - y)^2 + lambda |w|_1`.
///
/// Coordinate descent runs on the centred covariance `X_c^T X_c / n`, so one
/// problem can be solved for many `lambda` values at `O(q^2)` per sweep.
#[derive(Clone, Debug)]
pub struct LassoProblem<T: Real> {
    x_mean: DVector<T>,
    y_mean: T,
    /// `X_c^T X_c / n`
    cov: DMatrix<T>,
    /// `X_c^T y_c / n`
    corr: DVector<T>,
}

fn soft_threshold<T: Real>(v: T, t: T) -> T {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        T::zero()
    }
}

impl<T: Real> LassoProblem<T> {
    pub fn new(x: &DMatrix<T>, y: &DVector<T>) -> Result<Self> {
        check_xy(x, y)?;
        let n = T::from_usize_lossy(x.nrows());
        let (x_mean, xc, y_mean, yc) = center(x, y);
        Ok(Self {
            cov: xc.tr_mul(&xc) / n,
            corr: xc.tr_mul(&yc) / n,
            x_mean,
            y_mean,
        })
    }

    pub fn n_features(&self) -> usize {
        self.corr.len()
    }

    /// Smallest `lambda` for which every weight is zero:
    /// `max_j |(2/n) sum_t x_tj (y_t - mean(y))|`.
    pub fn lambda_max(&self) -> T {
        self.corr
            .iter()
            .fold(T::zero(), |acc, &c| acc.max((c + c).abs()))
    }

    /// Largest subgradient violation at `w`, given `grad = cov w - corr`.
    fn kkt_violation(&self, w: &DVector<T>, grad: &DVector<T>, lambda: T) -> T {
        let two = T::lit(2.0);
        w.iter().zip(grad.iter()).fold(T::zero(), |acc, (&wj, &gj)| {
            let smooth = two * gj;
            let v = if wj > T::zero() {
                (smooth + lambda).abs()
            } else if wj < T::zero() {
                (smooth - lambda).abs()
            } else {
                (smooth.abs() - lambda).max(T::zero())
            };
            acc.max(v)
        })
    }

    /// Cyclic coordinate descent from `w = 0`. Not converging within
    /// `max_iter` sweeps is reported through [`LinearModel::convergence`].
    pub fn solve(&self, lambda: T, opts: LassoOptions) -> Result<LinearModel<T>> {
        if !(lambda > T::zero()) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
        }
        let tol = T::lit(opts.tol);
        let q = self.n_features();
        let half = lambda * T::lit(0.5);
        let mut w = DVector::<T>::zeros(q);
        let mut grad = -self.corr.clone();
        let mut sweeps = 0;
        let mut max_change = T::zero();
        let mut kkt = T::zero();
        let mut converged = false;
        while sweeps < opts.max_iter {
            sweeps += 1;
            max_change = T::zero();
            for j in 0..q {
                let cjj = self.cov[(j, j)];
                let old = w[j];
                let new = if cjj > T::zero() {
                    // grad_j excluding the j-th term
                    let rho = cjj * old - grad[j];
                    soft_threshold(rho, half) / cjj
                } else {
                    T::zero()
                };
                let delta = new - old;
                if delta != T::zero() {
                    w[j] = new;
                    grad.axpy(delta, &self.cov.column(j), T::one());
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change < tol {
                // refresh the running gradient before judging optimality
                grad = &self.cov * &w - &self.corr;
                kkt = self.kkt_violation(&w, &grad, lambda);
                if kkt < tol {
                    converged = true;
                    break;
                }
            }
        }
        if !converged {
            grad = &self.cov * &w - &self.corr;
            kkt = self.kkt_violation(&w, &grad, lambda);
        }
        let b = self.y_mean - self.x_mean.dot(&w);
        let mut model = LinearModel::new(w, b);
        model.lambda = Some(lambda);
        model.convergence = Some(Convergence {
            converged,
            sweeps,
            max_change: max_change.as_f64(),
            kkt_violation: kkt.as_f64(),
        });
        Ok(model)
    }
}

/// LASSO with an unpenalised intercept; see [`LassoProblem`].
pub fn lasso_fit<T: Real>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    lambda: T,
    opts: LassoOptions,
) -> Result<LinearModel<T>> {
    LassoProblem::new(x, y)?.solve(lambda, opts)
}
