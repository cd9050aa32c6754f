//! Gaussian kernel ridge regression, exact and with the Nyström approximation.
//!
//! The Nyström estimator keeps `p` training rows as anchors and solves
//! `alpha = (K_np^T K_np + lambda n K_pp)^+ K_np^T y`, where `^+` is the
//! eigenvalue-thresholded pseudo-inverse from [`crate::linalg`].

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{select_rows, squared_distances, sym_pinv, PINV_RTOL};
use crate::scalar::Real;

/// `k(x, x') = exp(-gamma |x - x'|^2)`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec<T: Real> {
    gamma: T,
}

impl<T: Real> KernelSpec<T> {
    pub fn new(gamma: T) -> Result<Self> {
        if gamma > T::zero() && gamma.is_finite() {
            Ok(Self { gamma })
        } else {
            Err(Error::invalid(format!("kernel gamma must be finite and positive, got {gamma}")))
        }
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    /// Applies the kernel to precomputed squared distances.
    pub fn from_squared_distances(&self, d: &DMatrix<T>) -> DMatrix<T> {
        let g = self.gamma;
        d.map(|v| (-g * v).exp())
    }
}

/// Gram matrix between the rows of `a` and the rows of `b`.
pub fn gaussian_gram<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, spec: &KernelSpec<T>) -> Result<DMatrix<T>> {
    Ok(spec.from_squared_distances(&squared_distances(a, b)?))
}

/// A function `x -> sum_j alpha_j k(anchor_j, x)`.
pub trait KernelExpansion<T: Real> {
    fn anchors(&self) -> &DMatrix<T>;
    fn alpha(&self) -> &DVector<T>;
    fn kernel(&self) -> KernelSpec<T>;
}

pub fn krr_predict<T: Real, M: KernelExpansion<T> + ?Sized>(model: &M, x: &DMatrix<T>) -> Result<DVector<T>> {
    if x.ncols() != model.anchors().ncols() {
        return Err(Error::dims(format!(
            "model expects {} features, query has {}",
            model.anchors().ncols(),
            x.ncols()
        )));
    }
    Ok(gaussian_gram(x, model.anchors(), &model.kernel())? * model.alpha())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactKrrModel<T: Real> {
    pub points: DMatrix<T>,
    pub alpha: DVector<T>,
    pub spec: KernelSpec<T>,
    pub lambda: T,
}

impl<T: Real> KernelExpansion<T> for ExactKrrModel<T> {
    fn anchors(&self) -> &DMatrix<T> {
        &self.points
    }
    fn alpha(&self) -> &DVector<T> {
        &self.alpha
    }
    fn kernel(&self) -> KernelSpec<T> {
        self.spec
    }
}

fn check_lambda<T: Real>(lambda: T) -> Result<()> {
    if lambda > T::zero() && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("lambda must be positive, got {lambda}")))
    }
}

/// `alpha = (K + n lambda I)^{-1} y` by Cholesky factorisation.
pub fn krr_fit_exact<T: Real>(x: &DMatrix<T>, y: &DVector<T>, spec: KernelSpec<T>, lambda: T) -> Result<ExactKrrModel<T>> {
    check_lambda(lambda)?;
    if x.nrows() != y.len() || x.nrows() == 0 {
        return Err(Error::dims(format!("{} rows, {} targets", x.nrows(), y.len())));
    }
    let n = x.nrows();
    let mut system = gaussian_gram(x, x, &spec)?;
    if !system.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("kernel matrix"));
    }
    let shift = T::from_usize_lossy(n) * lambda;
    for i in 0..n {
        system[(i, i)] += shift;
    }
    let chol = system
        .cholesky()
        .ok_or_else(|| Error::Solver("K + n lambda I is not positive definite".into()))?;
    Ok(ExactKrrModel {
        points: x.clone(),
        alpha: chol.solve(y),
        spec,
        lambda,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NystromKrrModel<T: Real> {
    /// Row indices of the anchors in the training matrix.
    pub anchor_indices: Vec<usize>,
    pub anchors: DMatrix<T>,
    pub alpha: DVector<T>,
    pub spec: KernelSpec<T>,
    pub lambda: T,
    pub seed: u64,
}

impl<T: Real> KernelExpansion<T> for NystromKrrModel<T> {
    fn anchors(&self) -> &DMatrix<T> {
        &self.anchors
    }
    fn alpha(&self) -> &DVector<T> {
        &self.alpha
    }
    fn kernel(&self) -> KernelSpec<T> {
        self.spec
    }
}

/// `p` distinct indices from `0..n`, uniformly without replacement, sorted.
pub fn sample_anchor_indices(n: usize, p: usize, seed: u64) -> Result<Vec<usize>> {
    if p == 0 || p > n {
        return Err(Error::invalid(format!("need 1 <= p <= n, got p = {p}, n = {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, p).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Anchor choice and squared distances for one training matrix, reusable
/// across kernel widths, regularisation strengths and targets.
#[derive(Clone, Debug)]
pub struct NystromDesign<T: Real> {
    anchor_indices: Vec<usize>,
    anchors: DMatrix<T>,
    /// n x p squared distances from every training row to every anchor.
    sq_np: DMatrix<T>,
    seed: u64,
}

impl<T: Real> NystromDesign<T> {
    pub fn new(x: &DMatrix<T>, p: usize, seed: u64) -> Result<Self> {
        let anchor_indices = sample_anchor_indices(x.nrows(), p, seed)?;
        let anchors = select_rows(x, &anchor_indices);
        let sq_np = squared_distances(x, &anchors)?;
        Ok(Self {
            anchor_indices,
            anchors,
            sq_np,
            seed,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.sq_np.nrows()
    }

    pub fn anchor_indices(&self) -> &[usize] {
        &self.anchor_indices
    }

    pub fn anchors(&self) -> &DMatrix<T> {
        &self.anchors
    }

    /// Squared distances from arbitrary rows to the anchors.
    pub fn query_distances(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        squared_distances(x, &self.anchors)
    }

    /// Forms the normal equations for one kernel width. `y` may hold several
    /// targets as columns.
    pub fn system(&self, spec: KernelSpec<T>, y: &DMatrix<T>) -> Result<NystromSystem<T>> {
        if y.nrows() != self.n_rows() {
            return Err(Error::dims(format!(
                "{} targets for {} training rows",
                y.nrows(),
                self.n_rows()
            )));
        }
        let k_np = spec.from_squared_distances(&self.sq_np);
        let k_pp = DMatrix::from_fn(self.anchor_indices.len(), self.anchor_indices.len(), |a, b| {
            k_np[(self.anchor_indices[a], b)]
        });
        Ok(NystromSystem {
            ktk: k_np.tr_mul(&k_np),
            kty: k_np.tr_mul(y),
            k_pp,
            n: self.n_rows(),
            spec,
        })
    }

    pub fn model(&self, system: &NystromSystem<T>, lambda: T, alpha: DVector<T>) -> NystromKrrModel<T> {
        NystromKrrModel {
            anchor_indices: self.anchor_indices.clone(),
            anchors: self.anchors.clone(),
            alpha,
            spec: system.spec,
            lambda,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NystromSystem<T: Real> {
    ktk: DMatrix<T>,
    kty: DMatrix<T>,
    k_pp: DMatrix<T>,
    n: usize,
    spec: KernelSpec<T>,
}

impl<T: Real> NystromSystem<T> {
    pub fn spec(&self) -> KernelSpec<T> {
        self.spec
    }

    /// Coefficients, one column per target.
    pub fn solve(&self, lambda: T) -> Result<DMatrix<T>> {
        check_lambda(lambda)?;
        let a = &self.ktk + &self.k_pp * (lambda * T::from_usize_lossy(self.n));
        Ok(sym_pinv(&a, T::lit(PINV_RTOL))? * &self.kty)
    }
}

pub fn nystrom_krr_fit<T: Real>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    spec: KernelSpec<T>,
    lambda: T,
    p: usize,
    seed: u64,
) -> Result<NystromKrrModel<T>> {
    if x.nrows() != y.len() {
        return Err(Error::dims(format!("{} rows, {} targets", x.nrows(), y.len())));
    }
    let design = NystromDesign::new(x, p, seed)?;
    let rhs = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let system = design.system(spec, &rhs)?;
    let alpha = system.solve(lambda)?.column(0).into_owned();
    Ok(design.model(&system, lambda, alpha))
}

/// Serialisable form of a fitted Nyström model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NystromKrrDocument {
    pub anchor_indices: Vec<usize>,
    pub anchors: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub gamma: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl<T: Real> NystromKrrModel<T> {
    pub fn to_document(&self) -> NystromKrrDocument {
        NystromKrrDocument {
            anchor_indices: self.anchor_indices.clone(),
            anchors: self
                .anchors
                .row_iter()
                .map(|r| r.iter().map(|v| v.as_f64()).collect())
                .collect(),
            alpha: self.alpha.iter().map(|v| v.as_f64()).collect(),
            gamma: self.spec.gamma().as_f64(),
            lambda: self.lambda.as_f64(),
            seed: self.seed,
        }
    }

    pub fn from_document(doc: &NystromKrrDocument) -> Result<Self> {
        let p = doc.anchors.len();
        if p != doc.alpha.len() || p != doc.anchor_indices.len() {
            return Err(Error::dims("anchor, index and coefficient counts differ"));
        }
        let d = doc.anchors.first().map_or(0, Vec::len);
        if doc.anchors.iter().any(|r| r.len() != d) {
            return Err(Error::dims("ragged anchor rows"));
        }
        Ok(Self {
            anchor_indices: doc.anchor_indices.clone(),
            anchors: DMatrix::from_fn(p, d, |i, j| T::lit(doc.anchors[i][j])),
            alpha: DVector::from_iterator(p, doc.alpha.iter().map(|&v| T::lit(v))),
            spec: KernelSpec::new(T::lit(doc.gamma))?,
            lambda: T::lit(doc.lambda),
            seed: doc.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
    }

    fn spec(g: f64) -> KernelSpec<f64> {
        KernelSpec::new(g).unwrap()
    }

    #[test]
    fn gram_diagonal_limit_and_scalar() {
        let a = gaussian(5, 3, 1);
        let k = gaussian_gram(&a, &a, &spec(0.7)).unwrap();
        assert!(k.diagonal().iter().all(|&v| v == 1.0));
        let k = gaussian_gram(&a, &gaussian(4, 3, 2), &spec(1e-300)).unwrap();
        assert!(k.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let k = gaussian_gram(
            &DMatrix::from_element(1, 1, 0.0),
            &DMatrix::from_element(1, 1, 1.0),
            &spec(1.0),
        )
        .unwrap();
        assert!((k[(0, 0)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k[(0, 0)] - 0.367879).abs() < 1e-6);
        assert!(gaussian_gram(&a, &gaussian(2, 2, 3), &spec(1.0)).is_err());
        assert!(KernelSpec::new(0.0).is_err());
        assert!(KernelSpec::new(f64::NAN).is_err());
    }

    #[test]
    fn gram_symmetric_psd() {
        for seed in 0..5 {
            let a = gaussian(20, 3, seed);
            let k = gaussian_gram(&a, &a, &spec(0.5)).unwrap();
            assert!((&k - k.transpose()).amax() < 1e-12);
            let eig = nalgebra::SymmetricEigen::new(k);
            assert!(eig.eigenvalues.min() >= -1e-8);
        }
    }

    #[test]
    fn exact_krr_scalar_case() {
        let x = DMatrix::from_element(1, 2, 0.3);
        let y = DVector::from_element(1, 1.0);
        let m = krr_fit_exact(&x, &y, spec(1.0), 1.0).unwrap();
        assert!((m.alpha[0] - 0.5).abs() < 1e-15);
        assert!((krr_predict(&m, &x).unwrap()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exact_krr_shrinks_with_lambda() {
        let x = gaussian(25, 2, 4);
        let y = DVector::from_fn(25, |i, _| x[(i, 0)].sin());
        let norms: Vec<f64> = [1e-3, 1e-2, 1e-1, 1.0, 10.0]
            .iter()
            .map(|&l| krr_predict(&krr_fit_exact(&x, &y, spec(0.5), l).unwrap(), &x).unwrap().norm())
            .collect();
        for w in norms.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn exact_krr_solves_linear_system() {
        let x = gaussian(30, 2, 5);
        let y = DVector::from_fn(30, |i, _| x[(i, 0)] * x[(i, 1)]);
        let lambda = 0.01;
        let m = krr_fit_exact(&x, &y, spec(0.3), lambda).unwrap();
        let mut sys = gaussian_gram(&x, &x, &spec(0.3)).unwrap();
        for i in 0..30 {
            sys[(i, i)] += 30.0 * lambda;
        }
        assert!((sys * &m.alpha - &y).amax() < 1e-9);
    }

    #[test]
    fn exact_krr_interpolates_with_tiny_lambda() {
        let x = gaussian(15, 2, 6);
        let y = DVector::from_fn(15, |i, _| x[(i, 0)] - x[(i, 1)]);
        let m = krr_fit_exact(&x, &y, spec(1.0), 1e-10).unwrap();
        assert!((krr_predict(&m, &x).unwrap() - &y).amax() < 1e-4);
    }

    #[test]
    fn nystrom_with_all_points_equals_exact() {
        let x = gaussian(50, 4, 7);
        let y = DVector::from_fn(50, |i, _| (x[(i, 0)] + 0.5 * x[(i, 2)]).tanh());
        let (g, l) = (0.2, 1e-2);
        let exact = krr_fit_exact(&x, &y, spec(g), l).unwrap();
        let q = gaussian(20, 4, 8);
        for seed in [1, 99] {
            let ny = nystrom_krr_fit(&x, &y, spec(g), l, 50, seed).unwrap();
            let a = krr_predict(&exact, &q).unwrap();
            let b = krr_predict(&ny, &q).unwrap();
            assert!((&a - &b).norm() / a.norm() < 1e-6);
        }
    }

    #[test]
    fn single_anchor_is_scaled_bump() {
        let x = gaussian(10, 2, 9);
        let y = DVector::from_fn(10, |i, _| x[(i, 0)]);
        let (g, l) = (0.5, 0.1);
        let m = nystrom_krr_fit(&x, &y, spec(g), l, 1, 3).unwrap();
        let i0 = m.anchor_indices[0];
        // scalar closed form: alpha = sum_t k_t y_t / (sum_t k_t^2 + l n k(x0, x0))
        let k: Vec<f64> = (0..10)
            .map(|t| (-g * (0..2).map(|j| (x[(t, j)] - x[(i0, j)]).powi(2)).sum::<f64>()).exp())
            .collect();
        let num: f64 = k.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let den: f64 = k.iter().map(|a| a * a).sum::<f64>() + l * 10.0;
        assert!((m.alpha[0] - num / den).abs() < 1e-12);
        let pred = krr_predict(&m, &x).unwrap();
        for t in 0..10 {
            assert!((pred[t] - num / den * k[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn nystrom_is_seed_deterministic() {
        let x = gaussian(40, 3, 10);
        let y = DVector::from_fn(40, |i, _| x[(i, 1)]);
        let a = nystrom_krr_fit(&x, &y, spec(0.3), 0.01, 10, 42).unwrap();
        let b = nystrom_krr_fit(&x, &y, spec(0.3), 0.01, 10, 42).unwrap();
        assert_eq!(a, b);
        assert!(nystrom_krr_fit(&x, &y, spec(0.3), 0.01, 41, 42).is_err());
    }

    #[test]
    fn prediction_edge_cases() {
        let anchors = DMatrix::from_row_slice(1, 2, &[0.5, -1.0]);
        let m = NystromKrrModel {
            anchor_indices: vec![0],
            anchors: anchors.clone(),
            alpha: DVector::from_element(1, 2.5),
            spec: spec(3.0),
            lambda: 1.0,
            seed: 0,
        };
        assert_eq!(krr_predict(&m, &anchors).unwrap()[0], 2.5);
        let zero = NystromKrrModel { alpha: DVector::zeros(1), ..m.clone() };
        assert!(krr_predict(&zero, &gaussian(4, 2, 1)).unwrap().iter().all(|&v| v == 0.0));
        assert!(krr_predict(&m, &gaussian(4, 3, 1)).is_err());
    }

    #[test]
    fn three_anchor_manual_sum() {
        let anchors = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let m = NystromKrrModel {
            anchor_indices: vec![0, 1, 2],
            anchors,
            alpha: DVector::from_column_slice(&[1.0, -2.0, 0.5]),
            spec: spec(0.5),
            lambda: 1.0,
            seed: 0,
        };
        let q = DMatrix::from_row_slice(1, 1, &[1.5]);
        let manual = 1.0 * (-0.5f64 * 2.25).exp() - 2.0 * (-0.5f64 * 0.25).exp() + 0.5 * (-0.5f64 * 0.25).exp();
        assert!((krr_predict(&m, &q).unwrap()[0] - manual).abs() < 1e-15);
    }

    #[test]
    fn document_round_trip() {
        let x = gaussian(20, 2, 11);
        let y = DVector::from_fn(20, |i, _| x[(i, 0)]);
        let m = nystrom_krr_fit(&x, &y, spec(0.3), 0.01, 5, 1).unwrap();
        let json = serde_json::to_string(&m.to_document()).unwrap();
        let back: NystromKrrModel<f64> =
            NystromKrrModel::from_document(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn more_anchors_do_not_hurt_in_median() {
        let x = gaussian(200, 2, 12);
        let f = |i: usize, m: &DMatrix<f64>| (m[(i, 0)] * 1.5).sin() + 0.5 * m[(i, 1)].powi(2);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let y = DVector::from_fn(200, |i, _| f(i, &x) + 0.05 * rng.sample::<f64, _>(StandardNormal));
        let xt = gaussian(200, 2, 14);
        let yt = DVector::from_fn(200, |i, _| f(i, &xt));
        let medians: Vec<f64> = [5usize, 10, 20, 40, 80]
            .iter()
            .map(|&p| {
                let mut errs: Vec<f64> = (0..10)
                    .map(|seed| {
                        let m = nystrom_krr_fit(&x, &y, spec(0.5), 1e-4, p, seed).unwrap();
                        (krr_predict(&m, &xt).unwrap() - &yt).norm()
                    })
                    .collect();
                errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                (errs[4] + errs[5]) / 2.0
            })
            .collect();
        for w in medians.windows(2) {
            assert!(w[1] <= w[0] * 1.0001, "{medians:?}");
        }
    }
}
