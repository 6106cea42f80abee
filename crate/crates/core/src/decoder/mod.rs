//! Caption generation: constrained beam search, greedy and sampled decoding,
//! and grounding of generated words to proposals.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionTrace;
use crate::captioner::{CaptionModel, RuntimeState, VideoInput};
use crate::error::{Error, Result};
use crate::lang::{BOS, EOS, MAX_SENTENCE_LEN, PAD};
use crate::proposals::ProposalRecord;
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam: usize,
    /// Minimum number of interior words before EOS may be emitted.
    pub min_len: usize,
    /// Maximum number of interior words; EOS is forced afterwards.
    pub max_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam: 20,
            min_len: 4,
            max_len: MAX_SENTENCE_LEN,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::invalid("beam width must be at least 1"));
        }
        if self.min_len == 0 || self.max_len > MAX_SENTENCE_LEN || self.min_len > self.max_len {
            return Err(Error::invalid(format!(
                "length bounds {}..={} invalid (max {MAX_SENTENCE_LEN})",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BeamHypothesis<T> {
    /// Interior tokens emitted so far.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub state: RuntimeState<T>,
    /// One entry per interior token.
    pub trace: AttentionTrace<T>,
    pub finished: bool,
}

/// A decoded caption with its cumulative log-probability (EOS included).
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded<T> {
    pub tokens: Vec<usize>,
    pub trace: AttentionTrace<T>,
    pub log_prob: f64,
    pub finished: bool,
}

/// Tokens that may follow a prefix of `len` interior words.
fn allowed(token: usize, len: usize, cfg: &BeamConfig) -> bool {
    match token {
        BOS | PAD => false,
        EOS => len >= cfg.min_len,
        _ => len < cfg.max_len,
    }
}

fn rank(a_score: f64, a_tokens: &[usize], b_score: f64, b_tokens: &[usize]) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_tokens.last().cmp(&b_tokens.last()))
        .then_with(|| a_tokens.cmp(b_tokens))
}

struct Candidate {
    parent: usize,
    token: usize,
    score: f64,
    seq: Vec<usize>,
}

/// Length-unnormalized beam search over log-probabilities.
///
/// Ties are broken by lower last-token id, then by lexicographic sequence.
/// The search stops once the best finished hypothesis scores at least as
/// high as every live one, since extending a hypothesis cannot raise its
/// score.
pub fn beam_search<T: Real>(
    model: &CaptionModel<T>,
    input: &VideoInput<T>,
    cfg: &BeamConfig,
) -> Result<Decoded<T>> {
    cfg.validate()?;
    let mut alive = vec![BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: model.initial_state(),
        trace: Vec::new(),
        finished: false,
    }];
    let mut finished: Vec<BeamHypothesis<T>> = Vec::new();

    while !alive.is_empty() {
        let mut expansions = Vec::with_capacity(alive.len());
        for hyp in &alive {
            let prev = hyp.tokens.last().copied().unwrap_or(BOS);
            expansions.push(model.step_logits(&hyp.state, prev, input)?);
        }
        let mut cands = Vec::new();
        for (parent, (hyp, (logp, _, _))) in alive.iter().zip(&expansions).enumerate() {
            for (token, lp) in logp.iter().enumerate() {
                if !allowed(token, hyp.tokens.len(), cfg) {
                    continue;
                }
                let mut seq = hyp.tokens.clone();
                seq.push(token);
                cands.push(Candidate {
                    parent,
                    token,
                    score: hyp.log_prob + lp.as_f64(),
                    seq,
                });
            }
        }
        cands.sort_by(|a, b| rank(a.score, &a.seq, b.score, &b.seq));
        cands.truncate(cfg.beam);

        let mut next = Vec::with_capacity(cands.len());
        for c in cands {
            let (_, state, step) = &expansions[c.parent];
            let parent = &alive[c.parent];
            if c.token == EOS {
                finished.push(BeamHypothesis {
                    tokens: parent.tokens.clone(),
                    log_prob: c.score,
                    state: state.clone(),
                    trace: parent.trace.clone(),
                    finished: true,
                });
            } else {
                let mut trace = parent.trace.clone();
                trace.push(step.clone());
                next.push(BeamHypothesis {
                    tokens: c.seq,
                    log_prob: c.score,
                    state: state.clone(),
                    trace,
                    finished: false,
                });
            }
        }
        alive = next;
        let best_done = finished
            .iter()
            .map(|h| h.log_prob)
            .fold(f64::NEG_INFINITY, f64::max);
        let best_alive = alive
            .iter()
            .map(|h| h.log_prob)
            .fold(f64::NEG_INFINITY, f64::max);
        if best_done >= best_alive {
            break;
        }
    }

    let pool = if finished.is_empty() {
        &alive
    } else {
        &finished
    };
    let best = pool
        .iter()
        .min_by(|a, b| {
            let mut sa = a.tokens.clone();
            let mut sb = b.tokens.clone();
            if a.finished {
                sa.push(EOS);
            }
            if b.finished {
                sb.push(EOS);
            }
            rank(a.log_prob, &sa, b.log_prob, &sb)
        })
        .ok_or_else(|| Error::numerical("beam search produced no hypothesis"))?;
    Ok(Decoded {
        tokens: best.tokens.clone(),
        trace: best.trace.clone(),
        log_prob: best.log_prob,
        finished: best.finished,
    })
}

fn pick_greedy<T: Real>(logp: &[T], len: usize, cfg: &BeamConfig) -> usize {
    let mut best = None::<(usize, T)>;
    for (token, &lp) in logp.iter().enumerate() {
        if allowed(token, len, cfg) && best.is_none_or(|(_, b)| lp > b) {
            best = Some((token, lp));
        }
    }
    best.map_or(EOS, |(t, _)| t)
}

/// Most probable allowed token at every step, without lookahead.
pub fn greedy<T: Real>(
    model: &CaptionModel<T>,
    input: &VideoInput<T>,
    cfg: &BeamConfig,
) -> Result<Decoded<T>> {
    decode_with(model, input, cfg, |logp, len| {
        Ok(pick_greedy(logp, len, cfg))
    })
}

/// Ancestral sampling from the constrained distribution at `temperature`.
pub fn sample<T: Real>(
    model: &CaptionModel<T>,
    input: &VideoInput<T>,
    cfg: &BeamConfig,
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<Decoded<T>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid("sampling temperature must be positive"));
    }
    decode_with(model, input, cfg, |logp, len| {
        let weights: Vec<f64> = logp
            .iter()
            .enumerate()
            .map(|(t, lp)| {
                if allowed(t, len, cfg) {
                    (lp.as_f64() / temperature).exp()
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::numerical("degenerate sampling distribution"));
        }
        let mut u = rng.random::<f64>() * total;
        let mut last = EOS;
        for (t, w) in weights.iter().enumerate() {
            if *w > 0.0 {
                last = t;
                if u < *w {
                    return Ok(t);
                }
                u -= w;
            }
        }
        Ok(last)
    })
}

fn decode_with<T: Real>(
    model: &CaptionModel<T>,
    input: &VideoInput<T>,
    cfg: &BeamConfig,
    mut choose: impl FnMut(&[T], usize) -> Result<usize>,
) -> Result<Decoded<T>> {
    cfg.validate()?;
    let mut state = model.initial_state();
    let mut tokens = Vec::new();
    let mut trace = Vec::new();
    let mut log_prob = 0.0;
    let mut prev = BOS;
    loop {
        let (logp, next, step) = model.step_logits(&state, prev, input)?;
        let token = choose(&logp, tokens.len())?;
        log_prob += logp[token].as_f64();
        if token == EOS {
            break;
        }
        tokens.push(token);
        trace.push(step);
        state = next;
        prev = token;
    }
    Ok(Decoded {
        tokens,
        trace,
        log_prob,
        finished: true,
    })
}

/// Words skipped by [`ground`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StopList(BTreeSet<String>);

impl Default for StopList {
    fn default() -> Self {
        Self::parse(include_str!("../../data/stoplist.txt"))
    }
}

impl StopList {
    /// One word per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect(),
        )
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundedWord {
    pub word: String,
    pub t: usize,
    pub proposal_id: u64,
    pub beta: f64,
    pub first_frame: usize,
    pub last_frame: usize,
}

/// Links every content word to the proposal with the largest attention
/// weight at the step that emitted it.
///
/// `source_ids[i]` is the proposal id behind feature row `i`; each id must be
/// present in `pool`.
pub fn ground<T: Real, W: AsRef<str>>(
    words: &[W],
    trace: &AttentionTrace<T>,
    source_ids: &[u64],
    pool: &[ProposalRecord],
    stop: &StopList,
) -> Result<Vec<GroundedWord>> {
    if words.len() != trace.len() {
        return Err(Error::invalid(format!(
            "trace has {} steps for a {}-word sentence",
            trace.len(),
            words.len()
        )));
    }
    let mut out = Vec::new();
    for (t, (word, step)) in words.iter().zip(trace).enumerate() {
        let word = word.as_ref();
        if stop.contains(word) {
            continue;
        }
        let row = step.argmax_proposal;
        let id = *source_ids
            .get(row)
            .ok_or_else(|| Error::invalid(format!("word {t} attends to padded row {row}")))?;
        let record = pool
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| Error::invalid(format!("proposal {id} missing from the pool")))?;
        out.push(GroundedWord {
            word: word.to_string(),
            t,
            proposal_id: id,
            beta: step.beta[row].as_f64(),
            first_frame: record.first_frame,
            last_frame: record.last_frame(),
        });
    }
    Ok(out)
}
