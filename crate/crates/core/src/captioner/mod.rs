//! Caption model variants, teacher-forced loss with exact gradients, and the
//! single-step decoding interface.
//!
//! At step `t` the first LSTM receives the embedding of the previous word
//! (plus the semantic vector `s` for [`Variant::AttSem`]) and the pooled
//! proposal feature `z_t`, attended with its own previous hidden state. For
//! [`Variant::StackedAttSem`] a second LSTM consumes `[s ; h¹_t]` and its
//! hidden state predicts the word. Dropout is applied to the top hidden
//! state before the output projection.

pub mod optim;
pub mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{self, AttentionCache, AttentionParams, AttentionStep, AttentionTrace};
use crate::error::{Error, Result};
use crate::lang::TokenSequence;
use crate::params::{checksum, Parameters};
use crate::proposals::ProposalFeatureSet;
use crate::recurrent::{lstm_step, lstm_step_backward, LstmCache, LstmParams, LstmState};
use crate::semantics::SemanticSubset;
use crate::tensor::{log_softmax, Matrix, Real};

pub use optim::{Adam, OptimizerConfig};
pub use train::{train, EpochLog, Selection, TrainConfig, TrainOutcome, ValidationSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Uniform mean pooling over valid proposals, no attention.
    MeanPool,
    Att,
    /// Attention, with `s` concatenated to the word embedding.
    AttSem,
    /// Attention LSTM with a second LSTM over `[s ; h¹]` on top.
    StackedAttSem,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::MeanPool,
        Variant::Att,
        Variant::AttSem,
        Variant::StackedAttSem,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "meanpool" | "mean-pool" | "lstm" => Ok(Variant::MeanPool),
            "att" => Ok(Variant::Att),
            "att-sem" => Ok(Variant::AttSem),
            "stacked" | "stacked-att-sem" => Ok(Variant::StackedAttSem),
            other => Err(Error::invalid(format!("unknown variant {other:?}"))),
        }
    }

    pub fn uses_attention(self) -> bool {
        self != Variant::MeanPool
    }

    pub fn uses_semantic(self) -> bool {
        matches!(self, Variant::AttSem | Variant::StackedAttSem)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub semantic: SemanticSubset,
    /// Width of the assembled semantic vector (0 when unused).
    pub semantic_width: usize,
    /// Proposal descriptor width D.
    pub feature_dim: usize,
    pub hidden: usize,
    pub embedding: usize,
    pub attention: usize,
    pub dropout: f64,
    pub init_range: f64,
    pub forget_bias: f64,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(variant: Variant, feature_dim: usize) -> Self {
        Self {
            variant,
            semantic: SemanticSubset::NONE,
            semantic_width: 0,
            feature_dim,
            hidden: 128,
            embedding: 128,
            attention: 128,
            dropout: 0.5,
            init_range: 0.08,
            forget_bias: 1.0,
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }

    pub fn with_semantic(mut self, subset: SemanticSubset, width: usize) -> Self {
        self.semantic = subset;
        self.semantic_width = width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embedding == 0 || self.feature_dim == 0 {
            return Err(Error::invalid("model sizes must be positive"));
        }
        if self.variant.uses_attention() && self.attention == 0 {
            return Err(Error::invalid("attention size must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        let wants = self.variant.uses_semantic();
        if wants && (self.semantic.is_empty() || self.semantic_width == 0) {
            return Err(Error::invalid(format!(
                "variant {:?} needs at least one semantic block",
                self.variant
            )));
        }
        if !wants && (!self.semantic.is_empty() || self.semantic_width != 0) {
            return Err(Error::invalid(format!(
                "variant {:?} does not take semantic features",
                self.variant
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionModel<T> {
    pub config: ModelConfig,
    pub embedding: Matrix<T>,
    pub lstm1: LstmParams<T>,
    pub lstm2: Option<LstmParams<T>>,
    pub attention: Option<AttentionParams<T>>,
    pub w_out: Matrix<T>,
    pub b_out: Vec<T>,
}

impl<T: Real> Parameters<T> for CaptionModel<T> {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        f(
            &crate::params::join(prefix, "embedding"),
            self.embedding.data(),
        );
        self.lstm1
            .for_each(&crate::params::join(prefix, "lstm1"), f);
        if let Some(l) = &self.lstm2 {
            l.for_each(&crate::params::join(prefix, "lstm2"), f);
        }
        if let Some(a) = &self.attention {
            a.for_each(&crate::params::join(prefix, "attention"), f);
        }
        f(&crate::params::join(prefix, "out.w"), self.w_out.data());
        f(&crate::params::join(prefix, "out.b"), &self.b_out);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        f(
            &crate::params::join(prefix, "embedding"),
            self.embedding.data_mut(),
        );
        self.lstm1
            .for_each_mut(&crate::params::join(prefix, "lstm1"), f);
        if let Some(l) = &mut self.lstm2 {
            l.for_each_mut(&crate::params::join(prefix, "lstm2"), f);
        }
        if let Some(a) = &mut self.attention {
            a.for_each_mut(&crate::params::join(prefix, "attention"), f);
        }
        f(&crate::params::join(prefix, "out.w"), self.w_out.data_mut());
        f(&crate::params::join(prefix, "out.b"), &mut self.b_out);
    }
}

/// Dropout behaviour for a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active; the mask stream is derived from `seed`.
    Train {
        seed: u64,
    },
}

/// Per-video encoder inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoInput<T> {
    pub features: ProposalFeatureSet<T>,
    pub semantic: Option<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample<T> {
    pub video_id: String,
    pub input: VideoInput<T>,
    pub target: TokenSequence,
}

/// Recurrent state carried between decoding steps.
#[derive(Clone, Debug, PartialEq)]
pub struct RuntimeState<T> {
    pub layer1: LstmState<T>,
    pub layer2: Option<LstmState<T>>,
}

/// Log-probabilities, next state, attention and the backward cache.
type StepOutput<T> = (Vec<T>, RuntimeState<T>, AttentionStep<T>, StepCache<T>);

struct StepCache<T> {
    token_in: usize,
    target: usize,
    att: Option<AttentionCache<T>>,
    lstm1: LstmCache<T>,
    lstm2: Option<LstmCache<T>>,
    /// Top hidden state after dropout, as seen by the output projection.
    dropped: Vec<T>,
    /// Inverted-dropout multipliers; `None` when dropout is off.
    mask: Option<Vec<T>>,
    probs: Vec<T>,
}

/// Output of a teacher-forced pass.
pub struct SentenceForward<T> {
    pub loss: T,
    /// Log-probabilities over the vocabulary, one row per predicted token.
    pub log_probs: Vec<Vec<T>>,
    pub trace: AttentionTrace<T>,
    caches: Vec<StepCache<T>>,
}

impl<T: Real> CaptionModel<T> {
    /// Seeded initialization; identical configs give bit-identical models.
    pub fn build(cfg: &ModelConfig, vocab_size: usize) -> Result<Self> {
        cfg.validate()?;
        if vocab_size < 5 {
            return Err(Error::invalid(
                "vocabulary must hold the specials plus at least one word",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let r = cfg.init_range;
        let embedding = Matrix::from_fn(vocab_size, cfg.embedding, |_, _| {
            T::lit(rng.random_range(-r..=r))
        });
        let lstm1_input = cfg.embedding
            + if cfg.variant == Variant::AttSem {
                cfg.semantic_width
            } else {
                0
            };
        let lstm1 = LstmParams::init(
            lstm1_input,
            cfg.hidden,
            cfg.feature_dim,
            r,
            cfg.forget_bias,
            &mut rng,
        );
        let lstm2 = (cfg.variant == Variant::StackedAttSem).then(|| {
            LstmParams::init(
                cfg.semantic_width + cfg.hidden,
                cfg.hidden,
                0,
                r,
                cfg.forget_bias,
                &mut rng,
            )
        });
        let attention = cfg.variant.uses_attention().then(|| {
            AttentionParams::init(cfg.feature_dim, cfg.hidden, cfg.attention, r, &mut rng)
        });
        let w_out = Matrix::from_fn(vocab_size, cfg.hidden, |_, _| {
            T::lit(rng.random_range(-r..=r))
        });
        Ok(Self {
            config: cfg.clone(),
            embedding,
            lstm1,
            lstm2,
            attention,
            w_out,
            b_out: vec![T::zero(); vocab_size],
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.b_out.len()
    }

    pub fn checksum(&self) -> u64 {
        checksum(self)
    }

    /// Same architecture, zeroed; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    pub fn cast<U: Real>(&self) -> CaptionModel<U> {
        CaptionModel {
            config: self.config.clone(),
            embedding: self.embedding.cast(),
            lstm1: self.lstm1.cast(),
            lstm2: self.lstm2.as_ref().map(LstmParams::cast),
            attention: self.attention.as_ref().map(AttentionParams::cast),
            w_out: self.w_out.cast(),
            b_out: self.b_out.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn initial_state(&self) -> RuntimeState<T> {
        RuntimeState {
            layer1: LstmState::zeros(self.config.hidden),
            layer2: self
                .lstm2
                .as_ref()
                .map(|_| LstmState::zeros(self.config.hidden)),
        }
    }

    fn check_input(&self, input: &VideoInput<T>) -> Result<()> {
        if input.features.dim() != self.config.feature_dim {
            return Err(Error::shape(
                "caption model",
                format!(
                    "proposal width {} but model expects {}",
                    input.features.dim(),
                    self.config.feature_dim
                ),
            ));
        }
        let width = input.semantic.as_ref().map_or(0, Vec::len);
        if self.config.variant.uses_semantic() {
            if width != self.config.semantic_width {
                return Err(Error::shape(
                    "caption model",
                    format!(
                        "semantic width {width} but model expects {}",
                        self.config.semantic_width
                    ),
                ));
            }
        } else if input.semantic.is_some() {
            return Err(Error::invalid(
                "this variant does not take semantic features",
            ));
        }
        Ok(())
    }

    fn step_core(
        &self,
        state: &RuntimeState<T>,
        token: usize,
        input: &VideoInput<T>,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<StepOutput<T>> {
        if token >= self.vocab_size() {
            return Err(Error::invalid(format!("token id {token} out of range")));
        }
        let semantic = input.semantic.as_deref().unwrap_or(&[]);
        let mut x1 = self.embedding.row(token).to_vec();
        if self.config.variant == Variant::AttSem {
            x1.extend_from_slice(semantic);
        }
        let (z, step, att_cache) = match &self.attention {
            Some(params) => {
                let (z, step, cache) = attention::attend(params, &input.features, &state.layer1.h)?;
                (z, step, Some(cache))
            }
            None => {
                let (z, step) = attention::mean_pool(&input.features)?;
                (z, step, None)
            }
        };
        let (s1, c1) = lstm_step(&self.lstm1, &x1, &z, &state.layer1)?;
        let (top, layer2, c2) = match (&self.lstm2, &state.layer2) {
            (Some(params), Some(prev)) => {
                let mut x2 = semantic.to_vec();
                x2.extend_from_slice(&s1.h);
                let (s2, c2) = lstm_step(params, &x2, &[], prev)?;
                (s2.h.clone(), Some(s2), Some(c2))
            }
            (None, None) => (s1.h.clone(), None, None),
            _ => {
                return Err(Error::invalid(
                    "runtime state does not match the model layers",
                ))
            }
        };
        let p = self.config.dropout;
        let (dropped, mask) = match dropout {
            Some(rng) if p > 0.0 => {
                let keep = T::lit(1.0 / (1.0 - p));
                let mask: Vec<T> = (0..top.len())
                    .map(|_| {
                        if rng.random::<f64>() < p {
                            T::zero()
                        } else {
                            keep
                        }
                    })
                    .collect();
                let dropped = top.iter().zip(&mask).map(|(h, m)| *h * *m).collect();
                (dropped, Some(mask))
            }
            _ => (top, None),
        };
        let mut logits = self.b_out.clone();
        self.w_out.matvec_acc(&dropped, &mut logits);
        let logp = log_softmax(&logits);
        if logp.iter().any(|v| v.is_nan()) {
            return Err(Error::numerical("non-finite output distribution"));
        }
        let probs = logp.iter().map(|v| v.exp()).collect();
        let cache = StepCache {
            token_in: token,
            target: 0,
            att: att_cache,
            lstm1: c1,
            lstm2: c2,
            dropped,
            mask,
            probs,
        };
        let next = RuntimeState { layer1: s1, layer2 };
        Ok((logp, next, step, cache))
    }

    /// One decoding step in eval mode: log-probabilities of the next token,
    /// the advanced state and the attention weights used.
    pub fn step_logits(
        &self,
        state: &RuntimeState<T>,
        prev_token: usize,
        input: &VideoInput<T>,
    ) -> Result<(Vec<T>, RuntimeState<T>, AttentionStep<T>)> {
        self.check_input(input)?;
        let (logp, next, step, _) = self.step_core(state, prev_token, input, None)?;
        Ok((logp, next, step))
    }

    /// Teacher-forced pass: mean cross-entropy of `target[1..]` given
    /// `target[..len-1]`.
    pub fn forward_sentence(
        &self,
        input: &VideoInput<T>,
        target: &TokenSequence,
        mode: Mode,
    ) -> Result<SentenceForward<T>> {
        self.check_input(input)?;
        let ids = target.ids();
        if ids.len() < 2 {
            return Err(Error::invalid("target needs at least BOS and one token"));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.vocab_size()) {
            return Err(Error::invalid(format!("target token {bad} out of range")));
        }
        let mut rng = match mode {
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Mode::Eval => None,
        };
        let mut state = self.initial_state();
        let steps = ids.len() - 1;
        let mut loss = T::zero();
        let mut log_probs = Vec::with_capacity(steps);
        let mut trace = Vec::with_capacity(steps);
        let mut caches = Vec::with_capacity(steps);
        for t in 0..steps {
            let (logp, next, step, mut cache) =
                self.step_core(&state, ids[t], input, rng.as_mut())?;
            let target = ids[t + 1];
            loss = loss - logp[target];
            cache.target = target;
            log_probs.push(logp);
            trace.push(step);
            caches.push(cache);
            state = next;
        }
        let loss = loss / T::lit(steps as f64);
        if !loss.is_finite() {
            return Err(Error::numerical("non-finite sentence loss"));
        }
        Ok(SentenceForward {
            loss,
            log_probs,
            trace,
            caches,
        })
    }

    /// Exact gradient of the loss computed by `fwd`.
    pub fn backward(
        &self,
        input: &VideoInput<T>,
        fwd: &SentenceForward<T>,
    ) -> Result<CaptionModel<T>> {
        let mut grads = self.zeros_like();
        let steps = fwd.caches.len();
        let scale = T::one() / T::lit(steps as f64);
        let hidden = self.config.hidden;
        let emb = self.config.embedding;
        let sem_width = self.config.semantic_width;
        let mut carry_h1 = vec![T::zero(); hidden];
        let mut carry_c1 = vec![T::zero(); hidden];
        let mut carry_h2 = vec![T::zero(); hidden];
        let mut carry_c2 = vec![T::zero(); hidden];

        for cache in fwd.caches.iter().rev() {
            let mut dlogits: Vec<T> = cache.probs.iter().map(|p| *p * scale).collect();
            dlogits[cache.target] = dlogits[cache.target] - scale;
            grads.w_out.outer_acc(&dlogits, &cache.dropped);
            for (b, d) in grads.b_out.iter_mut().zip(&dlogits) {
                *b = *b + *d;
            }
            let mut dtop = vec![T::zero(); hidden];
            self.w_out.tmatvec_acc(&dlogits, &mut dtop);
            if let Some(mask) = &cache.mask {
                for (d, m) in dtop.iter_mut().zip(mask) {
                    *d = *d * *m;
                }
            }

            let dh1: Vec<T> = match (&self.lstm2, &cache.lstm2) {
                (Some(params), Some(c2)) => {
                    let dh2: Vec<T> = dtop.iter().zip(&carry_h2).map(|(a, b)| *a + *b).collect();
                    let g2 = lstm_step_backward(
                        params,
                        c2,
                        &dh2,
                        &carry_c2,
                        grads.lstm2.as_mut().expect("gradient buffer mirrors model"),
                    )?;
                    carry_h2 = g2.h_prev;
                    carry_c2 = g2.c_prev;
                    g2.u[sem_width..]
                        .iter()
                        .zip(&carry_h1)
                        .map(|(a, b)| *a + *b)
                        .collect()
                }
                _ => dtop.iter().zip(&carry_h1).map(|(a, b)| *a + *b).collect(),
            };

            let g1 =
                lstm_step_backward(&self.lstm1, &cache.lstm1, &dh1, &carry_c1, &mut grads.lstm1)?;
            for (e, d) in grads
                .embedding
                .row_mut(cache.token_in)
                .iter_mut()
                .zip(&g1.u[..emb])
            {
                *e = *e + *d;
            }
            carry_h1 = g1.h_prev;
            carry_c1 = g1.c_prev;
            if let (Some(params), Some(att_cache)) = (&self.attention, &cache.att) {
                let ga = attention::attend_backward(
                    params,
                    &input.features,
                    att_cache,
                    &g1.z,
                    grads
                        .attention
                        .as_mut()
                        .expect("gradient buffer mirrors model"),
                )?;
                for (c, d) in carry_h1.iter_mut().zip(&ga.h_prev) {
                    *c = *c + *d;
                }
            }
        }
        Ok(grads)
    }

    pub fn loss_and_grad(
        &self,
        example: &TrainingExample<T>,
        mode: Mode,
    ) -> Result<(T, CaptionModel<T>)> {
        let fwd = self.forward_sentence(&example.input, &example.target, mode)?;
        let grads = self.backward(&example.input, &fwd)?;
        Ok((fwd.loss, grads))
    }

    /// Fraction of target tokens that are the argmax prediction under
    /// teacher forcing.
    pub fn teacher_forced_accuracy(&self, example: &TrainingExample<T>) -> Result<(usize, usize)> {
        let fwd = self.forward_sentence(&example.input, &example.target, Mode::Eval)?;
        let ids = example.target.ids();
        let hits = fwd
            .log_probs
            .iter()
            .enumerate()
            .filter(|(t, lp)| attention::argmax(lp) == ids[t + 1])
            .count();
        Ok((hits, fwd.log_probs.len()))
    }
}
