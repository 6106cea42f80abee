//! Soft attention over a pool of proposal descriptors.
//!
//! Each valid proposal `p_i` is scored against the previous hidden state:
//! `ε_i = W_ph · tanh(W_p p_i + W_h h + b_ph)`, the scores are normalized with
//! a masked softmax into `β`, and the pooled feature is `z = Σ β_i p_i`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{join, Parameters};
use crate::proposals::ProposalFeatureSet;
use crate::tensor::{dot, softmax_masked, Matrix, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    /// att × D
    pub w_p: Matrix<T>,
    /// att × hidden
    pub w_h: Matrix<T>,
    pub b_ph: Vec<T>,
    /// 1 × att
    pub w_ph: Matrix<T>,
}

impl<T: Real> AttentionParams<T> {
    pub fn zeros(feature_dim: usize, hidden: usize, att: usize) -> Self {
        Self {
            w_p: Matrix::zeros(att, feature_dim),
            w_h: Matrix::zeros(att, hidden),
            b_ph: vec![T::zero(); att],
            w_ph: Matrix::zeros(1, att),
        }
    }

    pub fn init(
        feature_dim: usize,
        hidden: usize,
        att: usize,
        range: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut p = Self::zeros(feature_dim, hidden, att);
        for m in [&mut p.w_p, &mut p.w_h, &mut p.w_ph] {
            for v in m.data_mut() {
                *v = T::lit(rng.random_range(-range..=range));
            }
        }
        p
    }

    pub fn att_dim(&self) -> usize {
        self.b_ph.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.w_p.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w_h.cols()
    }

    pub fn cast<U: Real>(&self) -> AttentionParams<U> {
        AttentionParams {
            w_p: self.w_p.cast(),
            w_h: self.w_h.cast(),
            b_ph: self.b_ph.iter().map(|v| U::lit(v.as_f64())).collect(),
            w_ph: self.w_ph.cast(),
        }
    }
}

impl<T: Real> Parameters<T> for AttentionParams<T> {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        f(&join(prefix, "w_p"), self.w_p.data());
        f(&join(prefix, "w_h"), self.w_h.data());
        f(&join(prefix, "b_ph"), &self.b_ph);
        f(&join(prefix, "w_ph"), self.w_ph.data());
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        f(&join(prefix, "w_p"), self.w_p.data_mut());
        f(&join(prefix, "w_h"), self.w_h.data_mut());
        f(&join(prefix, "b_ph"), &mut self.b_ph);
        f(&join(prefix, "w_ph"), self.w_ph.data_mut());
    }
}

/// Scores and weights for one time step. Masked proposals carry
/// `ε = −∞` and `β = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionStep<T> {
    pub epsilon: Vec<T>,
    pub beta: Vec<T>,
    pub argmax_proposal: usize,
}

impl<T: Real> AttentionStep<T> {
    fn from_beta(epsilon: Vec<T>, beta: Vec<T>) -> Self {
        let argmax_proposal = argmax(&beta);
        Self {
            epsilon,
            beta,
            argmax_proposal,
        }
    }
}

/// First index of the maximum.
pub fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-word attention trace of a generated or teacher-forced sentence.
pub type AttentionTrace<T> = Vec<AttentionStep<T>>;

/// One JSON line of a serialized trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_id: Option<String>,
    pub word: String,
    pub t: usize,
    pub beta: Vec<f64>,
    pub argmax_proposal: usize,
}

impl TraceRecord {
    pub fn new<T: Real>(word: &str, t: usize, step: &AttentionStep<T>) -> Self {
        Self {
            video_id: None,
            word: word.to_string(),
            t,
            beta: step.beta.iter().map(|v| v.as_f64()).collect(),
            argmax_proposal: step.argmax_proposal,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttentionCache<T> {
    m: usize,
    feature_dim: usize,
    h_prev: Vec<T>,
    /// tanh activations, one row per proposal (zero rows when masked).
    act: Matrix<T>,
    beta: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct AttentionInputGrads<T> {
    /// m × D, zero on masked rows.
    pub features: Matrix<T>,
    pub h_prev: Vec<T>,
}

fn ensure_nonempty<T: Real>(features: &ProposalFeatureSet<T>) -> Result<()> {
    if features.valid_count() == 0 {
        return Err(Error::invalid(
            "attention needs at least one valid proposal",
        ));
    }
    Ok(())
}

pub fn attend<T: Real>(
    params: &AttentionParams<T>,
    features: &ProposalFeatureSet<T>,
    h_prev: &[T],
) -> Result<(Vec<T>, AttentionStep<T>, AttentionCache<T>)> {
    ensure_nonempty(features)?;
    let p = features.features();
    if p.cols() != params.feature_dim() || h_prev.len() != params.hidden() {
        return Err(Error::shape(
            "attend",
            format!(
                "params expect D={}, hidden={}; got D={}, hidden={}",
                params.feature_dim(),
                params.hidden(),
                p.cols(),
                h_prev.len()
            ),
        ));
    }
    let m = p.rows();
    let att = params.att_dim();
    let mut query = params.b_ph.clone();
    params.w_h.matvec_acc(h_prev, &mut query);

    let mut act = Matrix::zeros(m, att);
    let mut epsilon = vec![T::neg_infinity(); m];
    for i in 0..m {
        if !features.is_valid(i) {
            continue;
        }
        let mut a = query.clone();
        params.w_p.matvec_acc(p.row(i), &mut a);
        let row = act.row_mut(i);
        for (r, v) in row.iter_mut().zip(&a) {
            *r = v.tanh();
        }
        epsilon[i] = dot(params.w_ph.row(0), row);
    }
    let beta = softmax_masked(&epsilon, features.mask())?;
    let z = pool(p, &beta);
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("attention produced a non-finite feature"));
    }
    let cache = AttentionCache {
        m,
        feature_dim: p.cols(),
        h_prev: h_prev.to_vec(),
        act,
        beta: beta.clone(),
    };
    Ok((z, AttentionStep::from_beta(epsilon, beta), cache))
}

fn pool<T: Real>(p: &Matrix<T>, beta: &[T]) -> Vec<T> {
    let mut z = vec![T::zero(); p.cols()];
    for (i, &b) in beta.iter().enumerate() {
        if b == T::zero() {
            continue;
        }
        for (zd, &pd) in z.iter_mut().zip(p.row(i)) {
            *zd = *zd + b * pd;
        }
    }
    z
}

/// Backward pass of [`attend`]; parameter gradients are accumulated into
/// `grads`.
pub fn attend_backward<T: Real>(
    params: &AttentionParams<T>,
    features: &ProposalFeatureSet<T>,
    cache: &AttentionCache<T>,
    grad_z: &[T],
    grads: &mut AttentionParams<T>,
) -> Result<AttentionInputGrads<T>> {
    let p = features.features();
    if cache.m != p.rows()
        || cache.feature_dim != p.cols()
        || cache.h_prev.len() != params.hidden()
        || cache.act.cols() != params.att_dim()
    {
        return Err(Error::invalid("attention cache does not match inputs"));
    }
    if grad_z.len() != p.cols() {
        return Err(Error::shape(
            "attend_backward",
            "grad_z width differs from D",
        ));
    }
    let m = p.rows();
    let att = params.att_dim();
    let mut grad_p = Matrix::zeros(m, p.cols());
    let mut grad_h = vec![T::zero(); cache.h_prev.len()];

    // dL/dβ_i = grad_z · p_i
    let dbeta: Vec<T> = (0..m)
        .map(|i| {
            if features.is_valid(i) {
                dot(grad_z, p.row(i))
            } else {
                T::zero()
            }
        })
        .collect();
    let mean = dot(&cache.beta, &dbeta);
    let mut da_sum = vec![T::zero(); att];
    for i in 0..m {
        if !features.is_valid(i) {
            continue;
        }
        let b = cache.beta[i];
        for (g, &gz) in grad_p.row_mut(i).iter_mut().zip(grad_z) {
            *g = b * gz;
        }
        let deps = b * (dbeta[i] - mean);
        if deps == T::zero() {
            continue;
        }
        let act = cache.act.row(i);
        grads.w_ph.outer_acc(&[deps], act);
        let da: Vec<T> = act
            .iter()
            .zip(params.w_ph.row(0))
            .map(|(&t, &w)| deps * w * (T::one() - t * t))
            .collect();
        grads.w_p.outer_acc(&da, p.row(i));
        params.w_p.tmatvec_acc(&da, grad_p.row_mut(i));
        for (s, d) in da_sum.iter_mut().zip(&da) {
            *s = *s + *d;
        }
    }
    grads.w_h.outer_acc(&da_sum, &cache.h_prev);
    for (b, d) in grads.b_ph.iter_mut().zip(&da_sum) {
        *b = *b + *d;
    }
    params.w_h.tmatvec_acc(&da_sum, &mut grad_h);
    Ok(AttentionInputGrads {
        features: grad_p,
        h_prev: grad_h,
    })
}

/// Degenerate attention with `β` fixed uniform over the valid proposals.
pub fn mean_pool<T: Real>(features: &ProposalFeatureSet<T>) -> Result<(Vec<T>, AttentionStep<T>)> {
    ensure_nonempty(features)?;
    let k = T::lit(features.valid_count() as f64);
    let m = features.len();
    let beta: Vec<T> = (0..m)
        .map(|i| {
            if features.is_valid(i) {
                T::one() / k
            } else {
                T::zero()
            }
        })
        .collect();
    let epsilon = (0..m)
        .map(|i| {
            if features.is_valid(i) {
                T::zero()
            } else {
                T::neg_infinity()
            }
        })
        .collect();
    let z = pool(features.features(), &beta);
    Ok((z, AttentionStep::from_beta(epsilon, beta)))
}

pub fn mean_pool_backward<T: Real>(features: &ProposalFeatureSet<T>, grad_z: &[T]) -> Matrix<T> {
    let p = features.features();
    let k = T::lit(features.valid_count() as f64);
    let mut grad = Matrix::zeros(p.rows(), p.cols());
    for i in 0..p.rows() {
        if features.is_valid(i) {
            for (g, &gz) in grad.row_mut(i).iter_mut().zip(grad_z) {
                *g = gz / k;
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, relative_error};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut impl Rng, m: usize, valid: usize, d: usize) -> ProposalFeatureSet<f64> {
        let rows: Vec<Vec<f64>> = (0..valid)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        ProposalFeatureSet::from_valid_rows(&rows, m, d, (0..valid as u64).collect()).unwrap()
    }

    fn random_params(seed: u64, d: usize, hidden: usize, att: usize) -> AttentionParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = AttentionParams::init(d, hidden, att, 1.0, &mut rng);
        p.b_ph = (0..att).map(|_| rng.random_range(-0.5..0.5)).collect();
        p
    }

    #[test]
    fn singleton_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = random_set(&mut rng, 4, 1, 3);
        let params = random_params(2, 3, 2, 5);
        let (z, step, _) = attend(&params, &set, &[0.2, -0.4]).unwrap();
        assert_eq!(step.beta, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(z, set.features().row(0).to_vec());
        assert_eq!(step.argmax_proposal, 0);
    }

    #[test]
    fn identical_proposals_give_uniform_weights() {
        let p = vec![0.3, -0.7, 1.1];
        let rows = vec![p.clone(); 3];
        let set = ProposalFeatureSet::from_valid_rows(&rows, 5, 3, vec![0, 1, 2]).unwrap();
        let params = random_params(4, 3, 2, 4);
        let (z, step, _) = attend(&params, &set, &[0.5, 0.5]).unwrap();
        for i in 0..3 {
            assert!((step.beta[i] - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(&step.beta[3..], &[0.0, 0.0]);
        for (a, b) in z.iter().zip(&p) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn no_valid_proposal_rejected() {
        let set =
            ProposalFeatureSet::<f64>::from_valid_rows::<Vec<f64>>(&[], 3, 2, vec![]).unwrap();
        let params = AttentionParams::<f64>::zeros(2, 2, 2);
        assert!(matches!(
            attend(&params, &set, &[0.0, 0.0]),
            Err(Error::Invalid(_))
        ));
        assert!(mean_pool(&set).is_err());
    }

    #[test]
    fn matches_scalar_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (m, d, hid, att) = (3, 4, 3, 5);
        for seed in 0..5 {
            let set = random_set(&mut rng, m, m, d);
            let params = random_params(seed, d, hid, att);
            let h: Vec<f64> = (0..hid).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (z, step, _) = attend(&params, &set, &h).unwrap();

            let mut eps = vec![0.0f64; m];
            for i in 0..m {
                for a in 0..att {
                    let mut s = params.b_ph[a];
                    for j in 0..d {
                        s += params.w_p.get(a, j) * set.features().get(i, j);
                    }
                    for j in 0..hid {
                        s += params.w_h.get(a, j) * h[j];
                    }
                    eps[i] += params.w_ph.get(0, a) * s.tanh();
                }
            }
            let denom: f64 = eps.iter().map(|e| e.exp()).sum();
            let beta: Vec<f64> = eps.iter().map(|e| e.exp() / denom).collect();
            for i in 0..m {
                assert!((step.epsilon[i] - eps[i]).abs() < 1e-12);
                assert!((step.beta[i] - beta[i]).abs() < 1e-12);
            }
            for j in 0..d {
                let zj: f64 = (0..m).map(|i| beta[i] * set.features().get(i, j)).sum();
                assert!((z[j] - zj).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = random_set(&mut rng, 4, 3, 3);
        let params = random_params(5, 3, 2, 4);
        let (_, _, cache) = attend(&params, &set, &[0.1, 0.9]).unwrap();
        let mut grads = AttentionParams::zeros(3, 2, 4);
        let g = attend_backward(&params, &set, &cache, &[0.0; 3], &mut grads).unwrap();
        assert!(grads.flatten().iter().all(|&v| v == 0.0));
        assert!(g.features.data().iter().chain(&g.h_prev).all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = random_set(&mut rng, 4, 3, 3);
        let other = random_set(&mut rng, 6, 3, 3);
        let params = random_params(5, 3, 2, 4);
        let (_, _, cache) = attend(&params, &set, &[0.1, 0.9]).unwrap();
        let mut grads = AttentionParams::zeros(3, 2, 4);
        assert!(attend_backward(&params, &other, &cache, &[1.0; 3], &mut grads).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (m, d, hid, att) = (4, 3, 3, 5);
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            // last row padded to exercise the mask
            let set = random_set(&mut rng, m, m - 1, d);
            let params = random_params(seed, d, hid, att);
            let h: Vec<f64> = (0..hid).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, _, cache) = attend(&params, &set, &h).unwrap();
            let mut grads = AttentionParams::zeros(d, hid, att);
            let g = attend_backward(&params, &set, &cache, &[1.0; 3], &mut grads).unwrap();

            let loss = |p: &AttentionParams<f64>, s: &ProposalFeatureSet<f64>, h: &[f64]| -> f64 {
                attend(p, s, h).unwrap().0.iter().sum()
            };
            let numeric = finite_diff_grad(
                |x: &[f64]| {
                    let mut q = params.clone();
                    q.assign(x);
                    loss(&q, &set, &h)
                },
                &params.flatten(),
                1e-5,
            )
            .unwrap();
            for (a, n) in grads.flatten().iter().zip(&numeric) {
                assert!(relative_error(*a, *n, 1e-4) < 1e-6, "{a} vs {n}");
            }
            let numeric = finite_diff_grad(|x: &[f64]| loss(&params, &set, x), &h, 1e-5).unwrap();
            for (a, n) in g.h_prev.iter().zip(&numeric) {
                assert!(relative_error(*a, *n, 1e-4) < 1e-6);
            }
            let numeric = finite_diff_grad(
                |x: &[f64]| {
                    let mut s = set.clone();
                    s.features_mut().data_mut().copy_from_slice(x);
                    loss(&params, &s, &h)
                },
                set.features().data(),
                1e-5,
            )
            .unwrap();
            for (i, (a, n)) in g.features.data().iter().zip(&numeric).enumerate() {
                if i / d == m - 1 {
                    assert_eq!(*a, 0.0, "padded row must get zero gradient");
                } else {
                    assert!(relative_error(*a, *n, 1e-4) < 1e-6);
                }
            }
        }
    }

    #[test]
    fn mean_pool_is_uniform_average() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let set = ProposalFeatureSet::from_valid_rows(&rows, 4, 2, vec![7, 8, 9]).unwrap();
        let (z, step) = mean_pool(&set).unwrap();
        assert!((z[0] - 2.0 / 3.0).abs() < 1e-15 && (z[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(step.beta[3], 0.0);
        assert_eq!(step.argmax_proposal, 0);
        let g = mean_pool_backward(&set, &[3.0, 6.0]);
        assert_eq!(g.row(0), &[1.0, 2.0]);
        assert_eq!(g.row(3), &[0.0, 0.0]);
    }

    #[test]
    fn trace_record_json_shape() {
        let step = AttentionStep {
            epsilon: vec![0.0, f64::NEG_INFINITY],
            beta: vec![1.0, 0.0],
            argmax_proposal: 0,
        };
        let json = serde_json::to_string(&TraceRecord::new("cat", 2, &step)).unwrap();
        assert_eq!(
            json,
            r#"{"word":"cat","t":2,"beta":[1.0,0.0],"argmax_proposal":0}"#
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn simplex_and_convex_hull(seed in 0u64..10_000, m in 1usize..8, pad in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 3;
            let set = random_set(&mut rng, m + pad, m, d);
            let params = random_params(seed, d, 2, 3);
            let h = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let (z, step, _) = attend(&params, &set, &h).unwrap();
            let total: f64 = step.beta.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            for i in m..m + pad {
                prop_assert_eq!(step.beta[i], 0.0);
            }
            for j in 0..d {
                let lo = (0..m).map(|i| set.features().get(i, j)).fold(f64::INFINITY, f64::min);
                let hi = (0..m).map(|i| set.features().get(i, j)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(z[j] >= lo - 1e-6 && z[j] <= hi + 1e-6);
            }
        }
    }
}
