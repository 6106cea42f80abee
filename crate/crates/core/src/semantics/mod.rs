//! Subject/verb/object concepts and auxiliary semantic feature vectors.

pub mod lssvm;

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lssvm::{
    default_lambda_grid, lssvm_loo, lssvm_predict, lssvm_train, lssvm_train_with_bias,
    train_one_vs_all, KernelSpec, LsSvmModel, LsSvmSystem,
};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SvoTriplet {
    pub subject: Option<String>,
    pub verb: Option<String>,
    pub object: Option<String>,
}

impl SvoTriplet {
    pub fn new(subject: Option<&str>, verb: Option<&str>, object: Option<&str>) -> Result<Self> {
        if subject.is_none() && verb.is_none() && object.is_none() {
            return Err(Error::invalid("an SVO triplet needs at least one part"));
        }
        Ok(Self {
            subject: subject.map(str::to_string),
            verb: verb.map(str::to_string),
            object: object.map(str::to_string),
        })
    }

    pub fn part(&self, part: SvoPart) -> Option<&str> {
        match part {
            SvoPart::Subject => self.subject.as_deref(),
            SvoPart::Verb => self.verb.as_deref(),
            SvoPart::Object => self.object.as_deref(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SvoPart {
    Subject,
    Verb,
    Object,
}

impl SvoPart {
    pub const ALL: [SvoPart; 3] = [SvoPart::Subject, SvoPart::Verb, SvoPart::Object];
}

/// Three independent, sorted concept lists.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SvoVocabulary {
    pub subjects: Vec<String>,
    pub verbs: Vec<String>,
    pub objects: Vec<String>,
}

impl SvoVocabulary {
    pub fn part(&self, part: SvoPart) -> &[String] {
        match part {
            SvoPart::Subject => &self.subjects,
            SvoPart::Verb => &self.verbs,
            SvoPart::Object => &self.objects,
        }
    }

    /// Width of the concatenated `[S | V | O]` response vector.
    pub fn width(&self) -> usize {
        self.subjects.len() + self.verbs.len() + self.objects.len()
    }

    /// Offset of `part` inside the concatenated response vector.
    pub fn offset(&self, part: SvoPart) -> usize {
        match part {
            SvoPart::Subject => 0,
            SvoPart::Verb => self.subjects.len(),
            SvoPart::Object => self.subjects.len() + self.verbs.len(),
        }
    }

    /// Index of `word` in the concatenated vector.
    pub fn index(&self, part: SvoPart, word: &str) -> Option<usize> {
        let list = self.part(part);
        list.binary_search_by(|w| w.as_str().cmp(word))
            .ok()
            .map(|i| i + self.offset(part))
    }

    /// ±1 one-vs-all targets for a video: +1 for every concept mentioned by
    /// any of its sentences.
    pub fn labels(&self, sentences: &[SvoTriplet]) -> Vec<f64> {
        let mut y = vec![-1.0; self.width()];
        for t in sentences {
            for part in SvoPart::ALL {
                if let Some(i) = t.part(part).and_then(|w| self.index(part, w)) {
                    y[i] = 1.0;
                }
            }
        }
        y
    }

    /// Highest-response concept per part.
    pub fn decode(&self, responses: &[f64]) -> [Option<&str>; 3] {
        SvoPart::ALL.map(|part| {
            let off = self.offset(part);
            let list = self.part(part);
            let block = &responses[off..off + list.len()];
            let mut best: Option<usize> = None;
            for (i, v) in block.iter().enumerate() {
                if best.is_none_or(|b| *v > block[b]) {
                    best = Some(i);
                }
            }
            best.map(|i| list[i].as_str())
        })
    }
}

/// A token joins its part's vocabulary when at least two distinct sentences
/// of one single video mention it. Each inner list holds one triplet per
/// sentence of a video. Output lists are sorted, so the result does not
/// depend on video order.
pub fn mine_svo_vocabulary(videos: &[Vec<SvoTriplet>]) -> Result<SvoVocabulary> {
    if videos.is_empty() {
        return Err(Error::invalid("no videos to mine concepts from"));
    }
    let mut sets: [BTreeSet<String>; 3] = Default::default();
    for sentences in videos {
        for (slot, part) in SvoPart::ALL.into_iter().enumerate() {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for t in sentences {
                if let Some(w) = t.part(part) {
                    *counts.entry(w).or_default() += 1;
                }
            }
            for (w, c) in counts {
                if c >= 2 {
                    sets[slot].insert(w.to_string());
                }
            }
        }
    }
    let [s, v, o] = sets;
    Ok(SvoVocabulary {
        subjects: s.into_iter().collect(),
        verbs: v.into_iter().collect(),
        objects: o.into_iter().collect(),
    })
}

/// Most frequent label among human annotations; ties go to the label seen
/// first.
pub fn most_common_label<'a>(labels: &[Option<&'a str>]) -> Option<&'a str> {
    let mut counts: Vec<(&str, usize)> = Vec::new();
    for l in labels.iter().flatten() {
        match counts.iter_mut().find(|(w, _)| w == l) {
            Some((_, c)) => *c += 1,
            None => counts.push((l, 1)),
        }
    }
    let mut best: Option<(&str, usize)> = None;
    for (w, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((w, c));
        }
    }
    best.map(|(w, _)| w)
}

/// Binary accuracy: a video counts as correct iff the predicted label equals
/// the most common human label for that video.
pub fn binary_svo_accuracy(predicted: &[Option<&str>], human: &[Vec<Option<&str>>]) -> Result<f64> {
    if predicted.len() != human.len() || predicted.is_empty() {
        return Err(Error::invalid(
            "one prediction per annotated video is required",
        ));
    }
    let hits = predicted
        .iter()
        .zip(human)
        .filter(|(p, h)| p.is_some() && **p == most_common_label(h))
        .count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Coordinatewise mean of per-frame classification scores.
pub fn pool_cls_scores<F: AsRef<[f32]>>(per_frame: &[F]) -> Result<Vec<f64>> {
    let first = per_frame
        .first()
        .ok_or_else(|| Error::invalid("no frames to pool"))?
        .as_ref();
    let mut acc = vec![0.0f64; first.len()];
    for f in per_frame {
        let f = f.as_ref();
        if f.len() != acc.len() {
            return Err(Error::shape(
                "pool_cls_scores",
                "frames have different widths",
            ));
        }
        for (a, &v) in acc.iter_mut().zip(f) {
            *a += f64::from(v);
        }
    }
    let n = per_frame.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Per class: mean over each full window of `window` consecutive frames,
/// then the maximum over window positions. A video shorter than the window
/// is pooled as a single window.
pub fn pool_det_scores<F: AsRef<[f32]>>(per_frame: &[F], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::invalid("pooling window must be at least one frame"));
    }
    let classes = per_frame
        .first()
        .ok_or_else(|| Error::invalid("no frames to pool"))?
        .as_ref()
        .len();
    if per_frame.iter().any(|f| f.as_ref().len() != classes) {
        return Err(Error::shape(
            "pool_det_scores",
            "frames have different widths",
        ));
    }
    let t = per_frame.len();
    let w = window.min(t);
    let mut out = vec![f64::NEG_INFINITY; classes];
    for (c, best) in out.iter_mut().enumerate() {
        let series: Vec<f64> = per_frame.iter().map(|f| f64::from(f.as_ref()[c])).collect();
        for start in 0..=t - w {
            let mean = series[start..start + w].iter().sum::<f64>() / w as f64;
            if mean > *best {
                *best = mean;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticSubset {
    pub svo: bool,
    pub cls: bool,
    pub det: bool,
}

impl SemanticSubset {
    pub const NONE: Self = Self {
        svo: false,
        cls: false,
        det: false,
    };

    pub fn is_empty(&self) -> bool {
        !(self.svo || self.cls || self.det)
    }

    /// Parses a comma separated list such as `svo,det`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut out = Self::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "svo" => out.svo = true,
                "cls" => out.cls = true,
                "det" => out.det = true,
                other => return Err(Error::invalid(format!("unknown semantic block {other:?}"))),
            }
        }
        Ok(out)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.svo {
            parts.push("svo");
        }
        if self.cls {
            parts.push("cls");
        }
        if self.det {
            parts.push("det");
        }
        parts.join(",")
    }
}

/// Concatenated `[SVO | CLS | DET]` vector; inactive blocks are omitted.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticFeature {
    pub subset: SemanticSubset,
    values: Vec<f64>,
}

impl SemanticFeature {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn width(&self) -> usize {
        self.values.len()
    }
}

pub fn assemble_semantic(
    svo: Option<&[f64]>,
    cls: Option<&[f64]>,
    det: Option<&[f64]>,
    subset: SemanticSubset,
) -> Result<SemanticFeature> {
    let mut values = Vec::new();
    for (active, block, name) in [
        (subset.svo, svo, "svo"),
        (subset.cls, cls, "cls"),
        (subset.det, det, "det"),
    ] {
        if !active {
            continue;
        }
        let block = block.ok_or_else(|| {
            Error::invalid(format!("semantic block {name} is active but missing"))
        })?;
        if block.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!(
                "semantic block {name} has non-finite values"
            )));
        }
        values.extend_from_slice(block);
    }
    Ok(SemanticFeature { subset, values })
}

/// Distinct concepts mentioned by a video's sentences, per part.
pub fn mentioned(sentences: &[SvoTriplet], part: SvoPart) -> HashSet<&str> {
    sentences.iter().filter_map(|t| t.part(part)).collect()
}
