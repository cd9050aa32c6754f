use nalgebra::{DMatrix, DVector};

use super::{center, check_xy, LinearModel};
use crate::error::{Error, Result};
use crate::linalg::sym_pinv_solve;
use crate::scalar::Real;

/// Greedy selection order together with the score-set MSE after each step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepwisePath<T: Real> {
    pub order: Vec<usize>,
    /// `mse[k]` is the score-set MSE of the model using `order[..k]`.
    pub mse: Vec<T>,
    /// `models[k]` is the training fit using `order[..k]`.
    pub models: Vec<LinearModel<T>>,
}

struct TrainMoments<T: Real> {
    means: DVector<T>,
    gram: DMatrix<T>,
    corr: DVector<T>,
    y_mean: T,
    rtol: T,
}

impl<T: Real> TrainMoments<T> {
    fn new(x: &DMatrix<T>, y: &DVector<T>) -> Self {
        let (means, xc, y_mean, yc) = center(x, y);
        Self {
            gram: xc.tr_mul(&xc),
            corr: xc.tr_mul(&yc),
            means,
            y_mean,
            rtol: T::machine_epsilon() * T::from_usize_lossy(10 * x.ncols().max(1)),
        }
    }

    fn fit_subset(&self, cols: &[usize]) -> Result<(DVector<T>, T)> {
        if cols.is_empty() {
            return Ok((DVector::zeros(0), self.y_mean));
        }
        let g = DMatrix::from_fn(cols.len(), cols.len(), |a, b| self.gram[(cols[a], cols[b])]);
        let c = DVector::from_fn(cols.len(), |a, _| self.corr[cols[a]]);
        let w = sym_pinv_solve(&g, &c, self.rtol)?;
        let b = self.y_mean - cols.iter().zip(w.iter()).fold(T::zero(), |acc, (&j, &wj)| acc + self.means[j] * wj);
        Ok((w, b))
    }
}

fn subset_mse<T: Real>(x: &DMatrix<T>, y: &DVector<T>, cols: &[usize], w: &DVector<T>, b: T) -> T {
    let mut pred = DVector::from_element(x.nrows(), b);
    for (&j, &wj) in cols.iter().zip(w.iter()) {
        pred.axpy(wj, &x.column(j), T::one());
    }
    (pred - y).norm_squared() / T::from_usize_lossy(y.len())
}

fn full_model<T: Real>(q: usize, cols: &[usize], w: &DVector<T>, b: T) -> LinearModel<T> {
    let mut weights = DVector::zeros(q);
    for (&j, &wj) in cols.iter().zip(w.iter()) {
        weights[j] = wj;
    }
    let mut m = LinearModel::new(weights, b);
    m.selected = Some(cols.to_vec());
    m
}

/// Runs forward selection for `steps` steps, adding at each step the column
/// whose OLS refit has the lowest MSE on the score set (lowest index on ties).
pub fn forward_stepwise_path<T: Real>(
    x_train: &DMatrix<T>,
    y_train: &DVector<T>,
    x_score: &DMatrix<T>,
    y_score: &DVector<T>,
    steps: usize,
) -> Result<StepwisePath<T>> {
    check_xy(x_train, y_train)?;
    check_xy(x_score, y_score)?;
    let q = x_train.ncols();
    if x_score.ncols() != q {
        return Err(Error::dims("score set has a different column count"));
    }
    if steps > q {
        return Err(Error::invalid(format!("cannot select {steps} of {q} columns")));
    }
    let moments = TrainMoments::new(x_train, y_train);
    let (w0, b0) = moments.fit_subset(&[])?;
    let mut path = StepwisePath {
        order: Vec::with_capacity(steps),
        mse: vec![subset_mse(x_score, y_score, &[], &w0, b0)],
        models: vec![full_model(q, &[], &w0, b0)],
    };
    let mut remaining: Vec<usize> = (0..q).collect();
    let mut cols = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let mut best: Option<(usize, T, DVector<T>, T)> = None;
        for (pos, &j) in remaining.iter().enumerate() {
            cols.clear();
            cols.extend_from_slice(&path.order);
            cols.push(j);
            let (w, b) = moments.fit_subset(&cols)?;
            let mse = subset_mse(x_score, y_score, &cols, &w, b);
            if best.as_ref().is_none_or(|(_, m, _, _)| mse < *m) {
                best = Some((pos, mse, w, b));
            }
        }
        let (pos, mse, w, b) = best.expect("at least one remaining column");
        path.order.push(remaining.remove(pos));
        path.mse.push(mse);
        path.models.push(full_model(q, &path.order, &w, b));
    }
    Ok(path)
}

/// Forward stepwise OLS; the number of variables is the entry of
/// `candidate_counts` with the lowest score-set error (smallest count on ties).
pub fn forward_stepwise_fit<T: Real>(
    x_train: &DMatrix<T>,
    y_train: &DVector<T>,
    x_score: &DMatrix<T>,
    y_score: &DVector<T>,
    candidate_counts: &[usize],
) -> Result<LinearModel<T>> {
    let mut counts = candidate_counts.to_vec();
    counts.sort_unstable();
    counts.dedup();
    let max = *counts
        .last()
        .ok_or_else(|| Error::Empty("no candidate variable counts".into()))?;
    if max > x_train.ncols() {
        return Err(Error::invalid(format!(
            "candidate count {max} exceeds {} columns",
            x_train.ncols()
        )));
    }
    let mut path = forward_stepwise_path(x_train, y_train, x_score, y_score, max)?;
    let best = counts
        .iter()
        .copied()
        .fold(None::<usize>, |acc, k| match acc {
            Some(a) if path.mse[a] <= path.mse[k] => Some(a),
            _ => Some(k),
        })
        .expect("non-empty counts");
    Ok(path.models.swap_remove(best))
}
