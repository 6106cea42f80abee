use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Adam, CaptionModel, Mode, TrainingExample};
use crate::decoder::{beam_search, BeamConfig};
use crate::error::{Error, Result};
use crate::metrics::{bleu, EvalPair};
use crate::params::Parameters;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    Loss,
    Bleu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    pub select_by: Selection,
    /// Beam width used for the per-epoch validation BLEU.
    pub val_beam: usize,
    pub val_min_len: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 128,
            batch_size: 32,
            max_steps: None,
            select_by: Selection::Loss,
            val_beam: 1,
            val_min_len: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_bleu4: Option<f64>,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
    let mut out = String::from("epoch,train_loss,val_loss,val_bleu4\n");
    for e in log {
        let _ = writeln!(
            out,
            "{},{:.17e},{},{}",
            e.epoch,
            e.train_loss,
            opt(e.val_loss),
            opt(e.val_bleu4)
        );
    }
    out
}

/// Held-out examples; sentences sharing a `video_id` act as joint references
/// for BLEU.
pub type ValidationSet<T> = [TrainingExample<T>];

pub struct TrainOutcome<T> {
    pub log: Vec<EpochLog>,
    pub best_by_loss: (usize, CaptionModel<T>),
    pub best_by_bleu: (usize, CaptionModel<T>),
    pub steps: usize,
}

impl<T> TrainOutcome<T> {
    pub fn selected(&self, by: Selection) -> &(usize, CaptionModel<T>) {
        match by {
            Selection::Loss => &self.best_by_loss,
            Selection::Bleu => &self.best_by_bleu,
        }
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mean_eval_loss<T: Real>(model: &CaptionModel<T>, set: &ValidationSet<T>) -> Result<f64> {
    let losses: Result<Vec<f64>> = set
        .par_iter()
        .map(|ex| {
            Ok(model
                .forward_sentence(&ex.input, &ex.target, Mode::Eval)?
                .loss
                .as_f64())
        })
        .collect();
    let losses = losses?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn id_words(ids: &[usize]) -> Vec<String> {
    ids.iter().map(usize::to_string).collect()
}

/// Corpus BLEU@4 of decoded captions against the validation sentences,
/// compared as token ids.
pub fn validation_bleu4<T: Real>(
    model: &CaptionModel<T>,
    set: &ValidationSet<T>,
    beam: &BeamConfig,
) -> Result<f64> {
    let mut videos: BTreeMap<&str, (usize, Vec<Vec<String>>)> = BTreeMap::new();
    for (i, ex) in set.iter().enumerate() {
        videos
            .entry(ex.video_id.as_str())
            .or_insert_with(|| (i, Vec::new()))
            .1
            .push(id_words(ex.target.interior()));
    }
    let groups: Vec<_> = videos.into_values().collect();
    let pairs: Result<Vec<EvalPair>> = groups
        .into_par_iter()
        .map(|(first, refs)| {
            let out = beam_search(model, &set[first].input, beam)?;
            EvalPair::new(id_words(&out.tokens), refs)
        })
        .collect();
    Ok(bleu(&pairs?, 4)?[3])
}

/// Minibatch training with Adam. Every epoch ends with a validation pass;
/// the best parameters under each selection metric are retained.
pub fn train<T: Real>(
    model: CaptionModel<T>,
    corpus: &[TrainingExample<T>],
    val: &ValidationSet<T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    if corpus.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::invalid("epochs and batch size must be positive"));
    }
    let beam = BeamConfig {
        beam: cfg.val_beam,
        min_len: cfg.val_min_len,
        ..BeamConfig::default()
    };
    beam.validate()?;
    let mut model = model;
    let mut opt = Adam::new(model.config.optimizer.clone(), model.num_params());
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut log = Vec::new();
    let mut best_loss: Option<(f64, usize, CaptionModel<T>)> = None;
    let mut best_bleu: Option<(f64, usize, CaptionModel<T>)> = None;
    let mut steps = 0usize;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|cap| steps >= cap) {
                break;
            }
            let pieces: Result<Vec<(T, Vec<T>)>> = batch
                .par_iter()
                .map(|&i| {
                    let mode = Mode::Train {
                        seed: mix(mix(cfg.seed, steps as u64), i as u64),
                    };
                    let (loss, g) = model.loss_and_grad(&corpus[i], mode)?;
                    Ok((loss, g.flatten()))
                })
                .collect();
            let pieces = pieces.map_err(|e| match e {
                Error::Numerical(msg) => {
                    Error::numerical(format!("epoch {epoch} step {}: {msg}", steps + 1))
                }
                other => other,
            })?;
            let scale = T::one() / T::lit(batch.len() as f64);
            let mut grad = vec![T::zero(); pieces[0].1.len()];
            let mut batch_loss = T::zero();
            for (loss, g) in &pieces {
                batch_loss = batch_loss + *loss;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc = *acc + *v * scale;
                }
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::numerical(format!(
                    "epoch {epoch} step {}: non-finite loss or gradient",
                    steps + 1
                )));
            }
            opt.clip(&mut grad);
            opt.step(&mut model, &grad);
            if !model.is_finite() {
                return Err(Error::numerical(format!(
                    "epoch {epoch} step {}: parameters diverged",
                    steps + 1
                )));
            }
            steps += 1;
            epoch_loss += batch_loss.as_f64();
            seen += batch.len();
        }
        if seen == 0 {
            break 'epochs;
        }
        let (val_loss, val_bleu4) = if val.is_empty() {
            (None, None)
        } else {
            (
                Some(mean_eval_loss(&model, val)?),
                Some(validation_bleu4(&model, val, &beam)?),
            )
        };
        log.push(EpochLog {
            epoch,
            train_loss: epoch_loss / seen as f64,
            val_loss,
            val_bleu4,
        });
        let loss_key = val_loss.unwrap_or(f64::NEG_INFINITY);
        if best_loss
            .as_ref()
            .is_none_or(|(b, _, _)| loss_key < *b || val_loss.is_none())
        {
            best_loss = Some((loss_key, epoch, model.clone()));
        }
        let bleu_key = val_bleu4.unwrap_or(f64::INFINITY);
        if best_bleu
            .as_ref()
            .is_none_or(|(b, _, _)| bleu_key > *b || val_bleu4.is_none())
        {
            best_bleu = Some((bleu_key, epoch, model.clone()));
        }
        if cfg.max_steps.is_some_and(|cap| steps >= cap) {
            break;
        }
    }
    let (_, le, lm) = best_loss.expect("at least one epoch ran");
    let (_, be, bm) = best_bleu.expect("at least one epoch ran");
    Ok(TrainOutcome {
        log,
        best_by_loss: (le, lm),
        best_by_bleu: (be, bm),
        steps,
    })
}
