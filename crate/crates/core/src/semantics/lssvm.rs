//! Least-squares SVM with closed-form leave-one-out predictions.
//!
//! Without a bias term the model solves `(K + λI)α = y`. With a bias it
//! solves the bordered system `[[0, 1ᵀ], [1, K + λI]]·[b; α] = [0; y]`.
//! In both cases the leave-one-out prediction for point `i` is
//! `y_i − α_i / [H⁻¹]_ii` where `H` is the system matrix.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, invert, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: f64 },
}

impl KernelSpec {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(a, b),
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }

    pub fn gram(&self, x: &[Vec<f64>]) -> Matrix<f64> {
        let n = x.len();
        let mut k = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.eval(&x[i], &x[j]);
                k.set(i, j, v);
                k.set(j, i, v);
            }
        }
        k
    }

    /// Kernel values of `x` against every training point.
    pub fn against(&self, train: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        train.iter().map(|t| self.eval(t, x)).collect()
    }
}

/// Factorized system for one Gram matrix and one λ, shared by every class.
#[derive(Clone, Debug)]
pub struct LsSvmSystem {
    inverse: Matrix<f64>,
    lambda: f64,
    with_bias: bool,
    gram: Matrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LsSvmModel {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub with_bias: bool,
    labels: Vec<f64>,
    /// Diagonal of the system inverse restricted to the α block.
    inverse_diag: Vec<f64>,
    train_predictions: Vec<f64>,
}

fn check_gram(k: &Matrix<f64>) -> Result<()> {
    let n = k.rows();
    if n != k.cols() {
        return Err(Error::shape(
            "lssvm",
            format!("Gram matrix is {:?}", k.shape()),
        ));
    }
    if n < 2 {
        return Err(Error::invalid("LS-SVM needs at least two training points"));
    }
    if !k.is_finite() {
        return Err(Error::invalid("Gram matrix has non-finite entries"));
    }
    let scale = k.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in i + 1..n {
            if (k.get(i, j) - k.get(j, i)).abs() > 1e-12 * scale {
                return Err(Error::invalid(format!(
                    "Gram matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

impl LsSvmSystem {
    pub fn new(k: &Matrix<f64>, lambda: f64, with_bias: bool) -> Result<Self> {
        check_gram(k)?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("λ must be positive and finite"));
        }
        let n = k.rows();
        let off = usize::from(with_bias);
        let mut h = Matrix::zeros(n + off, n + off);
        for i in 0..n {
            for j in 0..n {
                h.set(i + off, j + off, k.get(i, j));
            }
            h.set(i + off, i + off, k.get(i, i) + lambda);
            if with_bias {
                h.set(0, i + 1, 1.0);
                h.set(i + 1, 0, 1.0);
            }
        }
        let inverse = invert(&h)?;
        Ok(Self {
            inverse,
            lambda,
            with_bias,
            gram: k.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.gram.rows()
    }

    pub fn fit(&self, y: &[f64]) -> Result<LsSvmModel> {
        let n = self.n();
        if y.len() != n {
            return Err(Error::shape(
                "lssvm_train",
                format!("{} labels for {n} points", y.len()),
            ));
        }
        let off = usize::from(self.with_bias);
        let mut rhs = vec![0.0; n + off];
        rhs[off..].copy_from_slice(y);
        let sol = self.inverse.matvec(&rhs);
        let (bias, alpha) = if self.with_bias {
            (sol[0], sol[1..].to_vec())
        } else {
            (0.0, sol)
        };
        let inverse_diag: Vec<f64> = (0..n).map(|i| self.inverse.get(i + off, i + off)).collect();
        if inverse_diag.iter().any(|d| *d == 0.0 || !d.is_finite()) {
            return Err(Error::numerical("degenerate inverse diagonal"));
        }
        let mut train_predictions = self.gram.matvec(&alpha);
        train_predictions.iter_mut().for_each(|p| *p += bias);
        Ok(LsSvmModel {
            alpha,
            bias,
            lambda: self.lambda,
            with_bias: self.with_bias,
            labels: y.to_vec(),
            inverse_diag,
            train_predictions,
        })
    }
}

pub fn lssvm_train(k: &Matrix<f64>, y: &[f64], lambda: f64) -> Result<LsSvmModel> {
    LsSvmSystem::new(k, lambda, false)?.fit(y)
}

pub fn lssvm_train_with_bias(k: &Matrix<f64>, y: &[f64], lambda: f64) -> Result<LsSvmModel> {
    LsSvmSystem::new(k, lambda, true)?.fit(y)
}

impl LsSvmModel {
    pub fn train_predictions(&self) -> &[f64] {
        &self.train_predictions
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Closed-form leave-one-out predictions for every training point.
    pub fn loo(&self) -> Result<Vec<f64>> {
        self.labels
            .iter()
            .zip(&self.alpha)
            .zip(&self.inverse_diag)
            .map(|((&y, &a), &d)| {
                if d == 0.0 || !d.is_finite() {
                    Err(Error::numerical("singular leave-one-out system"))
                } else {
                    Ok(y - a / d)
                }
            })
            .collect()
    }

    /// Mean squared leave-one-out residual.
    pub fn loo_press(&self) -> Result<f64> {
        let loo = self.loo()?;
        let n = loo.len() as f64;
        Ok(loo
            .iter()
            .zip(&self.labels)
            .map(|(p, y)| (y - p) * (y - p))
            .sum::<f64>()
            / n)
    }

    pub fn predict(&self, k_test: &[f64]) -> Result<f64> {
        if k_test.len() != self.alpha.len() {
            return Err(Error::shape(
                "lssvm_predict",
                format!(
                    "{} kernel values for {} training points",
                    k_test.len(),
                    self.alpha.len()
                ),
            ));
        }
        Ok(dot(k_test, &self.alpha) + self.bias)
    }
}

pub fn lssvm_loo(model: &LsSvmModel) -> Result<Vec<f64>> {
    model.loo()
}

pub fn lssvm_predict(model: &LsSvmModel, k_test: &[f64]) -> Result<f64> {
    model.predict(k_test)
}

/// Logarithmic grid 1e-3 … 1e3.
pub fn default_lambda_grid() -> Vec<f64> {
    (-3..=3).map(|e| 10f64.powi(e)).collect()
}

/// Per-class λ chosen by minimum leave-one-out PRESS; ties keep the earlier
/// grid entry. Returns one model per label vector.
pub fn train_one_vs_all(
    k: &Matrix<f64>,
    labels: &[Vec<f64>],
    grid: &[f64],
    with_bias: bool,
) -> Result<Vec<LsSvmModel>> {
    if grid.is_empty() {
        return Err(Error::invalid("empty λ grid"));
    }
    let systems: Vec<LsSvmSystem> = grid
        .par_iter()
        .map(|&lambda| LsSvmSystem::new(k, lambda, with_bias))
        .collect::<Result<_>>()?;
    labels
        .par_iter()
        .map(|y| {
            let mut best: Option<(f64, LsSvmModel)> = None;
            for sys in &systems {
                let model = sys.fit(y)?;
                let press = model.loo_press()?;
                if best.as_ref().is_none_or(|(b, _)| press < *b) {
                    best = Some((press, model));
                }
            }
            Ok(best.expect("non-empty grid").1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = if i % 2 == 0 { 1.0 } else { -1.0 };
            let c = 2.0 * label;
            x.push(vec![c + noise.sample(&mut rng), c + noise.sample(&mut rng)]);
            y.push(label);
        }
        (x, y)
    }

    #[test]
    fn identity_gram_halves_labels() {
        let k = Matrix::identity(4);
        let y = [1.0, -1.0, 1.0, 1.0];
        let m = lssvm_train(&k, &y, 1.0).unwrap();
        for i in 0..4 {
            assert!((m.alpha[i] - y[i] / 2.0).abs() < 1e-15);
            assert!((m.train_predictions()[i] - y[i] / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ridge_limit() {
        let (x, y) = blobs(1, 10);
        let k = KernelSpec::Linear.gram(&x);
        let m = lssvm_train(&k, &y, 1e12).unwrap();
        for (a, yi) in m.alpha.iter().zip(&y) {
            assert!((a - yi / 1e12).abs() < 1e-20);
        }
        assert!(m.train_predictions().iter().all(|p| p.abs() < 1e-9));
        assert!(m.loo().unwrap().iter().all(|p| p.abs() < 1e-9));
    }

    #[test]
    fn residual_of_linear_system() {
        let (x, y) = blobs(2, 30);
        let k = KernelSpec::Rbf { gamma: 0.5 }.gram(&x);
        let lambda = 0.1;
        let m = lssvm_train(&k, &y, lambda).unwrap();
        let mut r = k.matvec(&m.alpha);
        for i in 0..30 {
            r[i] += lambda * m.alpha[i] - y[i];
        }
        let ymax = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(r.iter().all(|v| v.abs() < 1e-8 * ymax));
    }

    #[test]
    fn rbf_separates_blobs() {
        let (x, y) = blobs(3, 30);
        let kernel = KernelSpec::Rbf { gamma: 0.5 };
        let m = lssvm_train(&kernel.gram(&x), &y, 0.1).unwrap();
        let correct = m
            .train_predictions()
            .iter()
            .zip(&y)
            .filter(|(p, y)| p.signum() == **y)
            .count();
        assert_eq!(correct, 30);

        let (xt, yt) = blobs(4, 40);
        let hits = xt
            .iter()
            .zip(&yt)
            .filter(|(xi, yi)| m.predict(&kernel.against(&x, xi)).unwrap().signum() == **yi)
            .count();
        assert!(hits as f64 >= 0.95 * 40.0);
    }

    #[test]
    fn predict_consistency_and_errors() {
        let (x, y) = blobs(5, 8);
        let k = KernelSpec::Linear.gram(&x);
        let m = lssvm_train(&k, &y, 0.5).unwrap();
        assert_eq!(m.predict(&[0.0; 8]).unwrap(), 0.0);
        for i in 0..8 {
            let p = m.predict(k.row(i)).unwrap();
            assert!((p - m.train_predictions()[i]).abs() < 1e-12);
        }
        assert!(m.predict(&[0.0; 3]).is_err());
    }

    #[test]
    fn rejects_bad_gram() {
        let k = Matrix::new(2, 2, vec![1.0, 0.5, 0.2, 1.0]).unwrap();
        assert!(lssvm_train(&k, &[1.0, -1.0], 1.0).is_err());
        let k = Matrix::new(2, 2, vec![1.0, f64::NAN, f64::NAN, 1.0]).unwrap();
        assert!(lssvm_train(&k, &[1.0, -1.0], 1.0).is_err());
        assert!(lssvm_train(&Matrix::identity(2), &[1.0, -1.0], 0.0).is_err());
        assert!(lssvm_train(&Matrix::identity(1), &[1.0], 1.0).is_err());
    }

    #[test]
    fn loo_on_two_identical_points() {
        let k = Matrix::new(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let m = lssvm_train(&k, &[1.0, -1.0], 0.5).unwrap();
        let loo = m.loo().unwrap();
        // each point predicted from the other alone: k·y_other/(k+λ)
        assert!((loo[0] - (-1.0 / 1.5)).abs() < 1e-12);
        assert!((loo[1] - (1.0 / 1.5)).abs() < 1e-12);
        assert!((loo[0] + loo[1]).abs() < 1e-12);
    }

    /// Explicit retraining without point `i`; independent of the closed form.
    pub(crate) fn retrain_loo(
        k: &Matrix<f64>,
        y: &[f64],
        lambda: f64,
        with_bias: bool,
    ) -> Vec<f64> {
        let n = y.len();
        (0..n)
            .map(|i| {
                let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                let sub = Matrix::from_fn(n - 1, n - 1, |r, c| k.get(keep[r], keep[c]));
                let ys: Vec<f64> = keep.iter().map(|&j| y[j]).collect();
                let m = if with_bias {
                    lssvm_train_with_bias(&sub, &ys, lambda).unwrap()
                } else {
                    lssvm_train(&sub, &ys, lambda).unwrap()
                };
                let kt: Vec<f64> = keep.iter().map(|&j| k.get(i, j)).collect();
                m.predict(&kt).unwrap()
            })
            .collect()
    }

    #[test]
    fn closed_form_loo_matches_retraining() {
        for seed in 0..3 {
            let (x, y) = blobs(10 + seed, 30);
            for kernel in [KernelSpec::Linear, KernelSpec::Rbf { gamma: 0.3 }] {
                let k = kernel.gram(&x);
                for with_bias in [false, true] {
                    let m = LsSvmSystem::new(&k, 0.7, with_bias)
                        .unwrap()
                        .fit(&y)
                        .unwrap();
                    let closed = m.loo().unwrap();
                    let explicit = retrain_loo(&k, &y, 0.7, with_bias);
                    for (a, b) in closed.iter().zip(&explicit) {
                        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn bias_model_satisfies_bordered_system() {
        let (x, mut y) = blobs(7, 12);
        y[0] = -1.0;
        let k = KernelSpec::Linear.gram(&x);
        let m = lssvm_train_with_bias(&k, &y, 0.3).unwrap();
        assert!(m.alpha.iter().sum::<f64>().abs() < 1e-10);
        for i in 0..12 {
            let lhs = dot(k.row(i), &m.alpha) + 0.3 * m.alpha[i] + m.bias;
            assert!((lhs - y[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn one_vs_all_picks_min_press() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (x, y) = blobs(9, 20);
        let flipped: Vec<f64> = y
            .iter()
            .map(|v| if rng.random_bool(0.2) { -v } else { *v })
            .collect();
        let k = KernelSpec::Linear.gram(&x);
        let grid = default_lambda_grid();
        let models = train_one_vs_all(&k, &[y.clone(), flipped.clone()], &grid, false).unwrap();
        for (model, labels) in models.iter().zip([&y, &flipped]) {
            let best = grid
                .iter()
                .map(|&l| (l, lssvm_train(&k, labels, l).unwrap().loo_press().unwrap()))
                .fold((f64::NAN, f64::INFINITY), |acc, (l, p)| {
                    if p < acc.1 {
                        (l, p)
                    } else {
                        acc
                    }
                });
            assert_eq!(model.lambda, best.0);
        }
    }
}
