//! Corpus-level BLEU with clipped n-gram precision and brevity penalty.

use std::collections::HashMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalPair {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    pub fn new(candidate: Vec<String>, references: Vec<Vec<String>>) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::invalid(
                "an evaluation pair needs at least one reference",
            ));
        }
        Ok(Self {
            candidate,
            references,
        })
    }

    /// Whitespace-tokenized convenience constructor.
    pub fn from_text(candidate: &str, references: &[&str]) -> Result<Self> {
        let split = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        Self::new(
            split(candidate),
            references.iter().map(|r| split(r)).collect(),
        )
    }

    /// Reference length closest to the candidate length; ties go to the
    /// shorter reference.
    fn closest_ref_len(&self) -> usize {
        let c = self.candidate.len() as i64;
        self.references
            .iter()
            .map(Vec::len)
            .min_by_key(|&r| ((r as i64 - c).abs(), r))
            .unwrap_or(0)
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Corpus totals `(clipped matches, candidate n-grams)`; each candidate
/// n-gram count is clipped at its maximum count in any single reference.
pub fn ngram_precision(pairs: &[EvalPair], n: usize) -> Result<(usize, usize)> {
    if n == 0 {
        return Err(Error::invalid("n-gram order must be at least 1"));
    }
    let mut matched = 0;
    let mut total = 0;
    for pair in pairs {
        let cand = ngram_counts(&pair.candidate, n);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in &pair.references {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        for (g, c) in cand {
            total += c;
            matched += c.min(max_ref.get(g).copied().unwrap_or(0));
        }
    }
    Ok((matched, total))
}

/// `BLEU@1 ..= BLEU@max_n`, each in [0, 1].
pub fn bleu(pairs: &[EvalPair], max_n: usize) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::invalid("BLEU over an empty corpus"));
    }
    if max_n == 0 {
        return Err(Error::invalid("max_n must be at least 1"));
    }
    let c: usize = pairs.iter().map(|p| p.candidate.len()).sum();
    let r: usize = pairs.iter().map(EvalPair::closest_ref_len).sum();
    let bp = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let mut log_sum = 0.0;
    let mut zero = false;
    let mut out = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let (m, t) = ngram_precision(pairs, n)?;
        if m == 0 || t == 0 {
            zero = true;
        } else {
            log_sum += (m as f64 / t as f64).ln();
        }
        out.push(if zero || bp == 0.0 {
            0.0
        } else {
            bp * (log_sum / n as f64).exp()
        });
    }
    Ok(out)
}
