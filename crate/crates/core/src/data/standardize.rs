use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Per-column affine scaling to zero mean and unit (population) variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T: Real> {
    pub mean: Vec<T>,
    /// Strictly positive; a zero deviation is stored as one.
    pub std: Vec<T>,
    pub fitted_on: String,
}

/// Fits a [`Standardizer`] on the given rows of `m`.
pub fn fit_standardizer<T: Real>(m: &DMatrix<T>, rows: &[usize], fitted_on: impl Into<String>) -> Result<Standardizer<T>> {
    if rows.is_empty() {
        return Err(Error::Empty("standardizer row range".into()));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= m.nrows()) {
        return Err(Error::dims(format!("row {bad} out of {}", m.nrows())));
    }
    let count = T::from_usize_lossy(rows.len());
    let mut mean = Vec::with_capacity(m.ncols());
    let mut std = Vec::with_capacity(m.ncols());
    for col in m.column_iter() {
        let mu = rows.iter().fold(T::zero(), |acc, &r| acc + col[r]) / count;
        let var = rows.iter().fold(T::zero(), |acc, &r| {
            let d = col[r] - mu;
            acc + d * d
        }) / count;
        let sd = var.sqrt();
        mean.push(mu);
        std.push(if sd > T::zero() { sd } else { T::one() });
    }
    Ok(Standardizer {
        mean,
        std,
        fitted_on: fitted_on.into(),
    })
}

impl<T: Real> Standardizer<T> {
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, m: &DMatrix<T>) -> Result<()> {
        if m.ncols() != self.width() {
            return Err(Error::dims(format!(
                "standardizer fitted on {} columns, got {}",
                self.width(),
                m.ncols()
            )));
        }
        Ok(())
    }

    pub fn transform(&self, m: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.check(m)?;
        let mut out = m.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (mu, sd) = (self.mean[j], self.std[j]);
            col.apply(|v| *v = (*v - mu) / sd);
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, m: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.check(m)?;
        let mut out = m.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (mu, sd) = (self.mean[j], self.std[j]);
            col.apply(|v| *v = *v * sd + mu);
        }
        Ok(out)
    }

    pub fn transform_column(&self, j: usize, v: &DVector<T>) -> DVector<T> {
        v.map(|x| (x - self.mean[j]) / self.std[j])
    }

    pub fn inverse_column(&self, j: usize, v: &DVector<T>) -> DVector<T> {
        v.map(|x| x * self.std[j] + self.mean[j])
    }
}
