//! Proposal pool processing: extent filtering, overlap deduplication,
//! semantic scoring and fixed-size selection with padding.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn intersection(&self, other: &Self) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    pub fn validate(&self, frame_width: f64, frame_height: f64) -> Result<()> {
        let ok = self.x1 <= self.x2
            && self.y1 <= self.y2
            && self.x1 >= 0.0
            && self.y1 >= 0.0
            && self.x2 <= frame_width
            && self.y2 <= frame_height;
        if !ok {
            return Err(Error::invalid(format!(
                "box {self:?} is malformed or outside a {frame_width}x{frame_height} frame"
            )));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

/// Intersection over union; zero when the union has no area.
pub fn iou_2d(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// A spatio-temporal tube: one box per frame over a contiguous span.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalRecord {
    pub id: u64,
    pub first_frame: usize,
    pub boxes: Vec<BoundingBox>,
    pub descriptor: Vec<f32>,
}

impl ProposalRecord {
    pub fn last_frame(&self) -> usize {
        self.first_frame + self.boxes.len().saturating_sub(1)
    }

    pub fn span_len(&self) -> usize {
        self.boxes.len()
    }

    pub fn box_at(&self, frame: usize) -> Option<&BoundingBox> {
        frame
            .checked_sub(self.first_frame)
            .and_then(|k| self.boxes.get(k))
    }

    pub fn median_area(&self) -> f64 {
        let mut areas: Vec<f64> = self.boxes.iter().map(BoundingBox::area).collect();
        if areas.is_empty() {
            return 0.0;
        }
        areas.sort_by(f64::total_cmp);
        let n = areas.len();
        if n % 2 == 1 {
            areas[n / 2]
        } else {
            0.5 * (areas[n / 2 - 1] + areas[n / 2])
        }
    }

    pub fn validate(&self, frame_width: f64, frame_height: f64, video_len: usize) -> Result<()> {
        if self.boxes.is_empty() {
            return Err(Error::invalid(format!("proposal {} has no boxes", self.id)));
        }
        if self.last_frame() >= video_len {
            return Err(Error::invalid(format!(
                "proposal {} spans past the video end (frame {} of {video_len})",
                self.id,
                self.last_frame()
            )));
        }
        for b in &self.boxes {
            b.validate(frame_width, frame_height)?;
        }
        Ok(())
    }
}

/// Volumetric overlap: per-frame intersections over per-frame unions,
/// summed over the union of both spans.
pub fn st_iou(a: &ProposalRecord, b: &ProposalRecord) -> f64 {
    let start = a.first_frame.min(b.first_frame);
    let end = a.last_frame().max(b.last_frame());
    let (mut inter, mut union) = (0.0, 0.0);
    for f in start..=end {
        match (a.box_at(f), b.box_at(f)) {
            (Some(x), Some(y)) => {
                let i = x.intersection(y);
                inter += i;
                union += x.area() + y.area() - i;
            }
            (Some(x), None) | (None, Some(x)) => union += x.area(),
            (None, None) => {}
        }
    }
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredProposal {
    pub record: ProposalRecord,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterConfig {
    pub min_frames: usize,
    pub min_area_fraction: f64,
    pub dedup_threshold: f64,
    pub frame_width: f64,
    pub frame_height: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_frames: 15,
            min_area_fraction: 0.005,
            dedup_threshold: 0.5,
            frame_width: 320.0,
            frame_height: 240.0,
        }
    }
}

/// Descending score, ties broken by lower id.
fn rank_order(a: &ScoredProposal, b: &ScoredProposal) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.record.id.cmp(&b.record.id))
}

/// Drops small/short proposals, then greedily removes near-duplicates in
/// descending score order. Output is in rank order.
pub fn filter_pool(pool: &[ScoredProposal], cfg: &FilterConfig) -> Vec<ScoredProposal> {
    let min_area = cfg.min_area_fraction * cfg.frame_width * cfg.frame_height;
    let mut candidates: Vec<&ScoredProposal> = pool
        .iter()
        .filter(|p| p.record.span_len() >= cfg.min_frames && p.record.median_area() >= min_area)
        .collect();
    candidates.sort_by(|a, b| rank_order(a, b));
    let mut kept: Vec<ScoredProposal> = Vec::new();
    for c in candidates {
        if kept
            .iter()
            .all(|k| st_iou(&k.record, &c.record) <= cfg.dedup_threshold)
        {
            kept.push(c.clone());
        }
    }
    kept
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub class: usize,
    pub score: f64,
}

/// Average of a classification score (per-frame maximum class activation,
/// averaged over the span) and a detection score (per-frame maximum of
/// detection score × IoU with the proposal box, averaged over the span).
///
/// `frame_cls` and `frame_dets` are indexed by absolute frame number.
pub fn score_proposal<C: AsRef<[f32]>>(
    prop: &ProposalRecord,
    frame_cls: &[C],
    frame_dets: &[Vec<Detection>],
) -> Result<f64> {
    if prop.boxes.is_empty() {
        return Err(Error::invalid(format!(
            "proposal {} has an empty span",
            prop.id
        )));
    }
    let mut cls_total = 0.0;
    let mut det_total = 0.0;
    for (k, pbox) in prop.boxes.iter().enumerate() {
        let frame = prop.first_frame + k;
        let cls = frame_cls
            .get(frame)
            .map(AsRef::as_ref)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| {
                Error::invalid(format!("missing classification scores for frame {frame}"))
            })?;
        let dets = frame_dets
            .get(frame)
            .ok_or_else(|| Error::invalid(format!("missing detections for frame {frame}")))?;
        cls_total += cls
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v)));
        det_total += dets
            .iter()
            .map(|d| d.score * iou_2d(&d.bbox, pbox))
            .fold(0.0, f64::max);
    }
    let n = prop.boxes.len() as f64;
    Ok((cls_total / n + det_total / n) / 2.0)
}

/// Fixed-size proposal matrix `P` with a validity mask. The first
/// `valid_count` rows are real proposals, the rest are zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalFeatureSet<T> {
    features: Matrix<T>,
    valid: Vec<bool>,
    source_ids: Vec<u64>,
}

impl<T: Real> ProposalFeatureSet<T> {
    pub fn from_valid_rows<R: AsRef<[T]>>(
        rows: &[R],
        m: usize,
        dim: usize,
        source_ids: Vec<u64>,
    ) -> Result<Self> {
        if rows.len() > m {
            return Err(Error::invalid(format!(
                "{} proposals exceed m={m}",
                rows.len()
            )));
        }
        if source_ids.len() != rows.len() {
            return Err(Error::invalid(
                "one source id is required per valid proposal",
            ));
        }
        let mut features = Matrix::zeros(m, dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::shape(
                    "ProposalFeatureSet",
                    format!("descriptor {i} has {} values, expected {dim}", r.len()),
                ));
            }
            features.row_mut(i).copy_from_slice(r);
        }
        let valid = (0..m).map(|i| i < rows.len()).collect();
        Ok(Self {
            features,
            valid,
            source_ids,
        })
    }

    /// Builds a set from a full `m × D` matrix whose first `valid_count` rows
    /// are real.
    pub fn new(features: Matrix<T>, valid_count: usize, source_ids: Vec<u64>) -> Result<Self> {
        if valid_count > features.rows() || source_ids.len() != valid_count {
            return Err(Error::invalid(
                "mask and source ids disagree with the feature matrix",
            ));
        }
        for i in valid_count..features.rows() {
            if features.row(i).iter().any(|v| *v != T::zero()) {
                return Err(Error::invalid(format!(
                    "padded proposal row {i} is not zero"
                )));
            }
        }
        let valid = (0..features.rows()).map(|i| i < valid_count).collect();
        Ok(Self {
            features,
            valid,
            source_ids,
        })
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    /// Mutable access to the descriptors; callers must keep padded rows zero.
    pub fn features_mut(&mut self) -> &mut Matrix<T> {
        &mut self.features
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn is_valid(&self, i: usize) -> bool {
        self.valid[i]
    }

    pub fn valid_count(&self) -> usize {
        self.source_ids.len()
    }

    /// Number of rows, including padding.
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn source_ids(&self) -> &[u64] {
        &self.source_ids
    }

    pub fn cast<U: Real>(&self) -> ProposalFeatureSet<U> {
        ProposalFeatureSet {
            features: self.features.cast(),
            valid: self.valid.clone(),
            source_ids: self.source_ids.clone(),
        }
    }
}

/// Keeps the `m` best-scoring proposals (ties → lower id) and zero-pads.
pub fn select_and_pad<T: Real>(pool: &[ScoredProposal], m: usize) -> Result<ProposalFeatureSet<T>> {
    if m == 0 {
        return Err(Error::invalid("m must be at least 1"));
    }
    if pool.is_empty() {
        return Err(Error::invalid("empty proposal pool"));
    }
    let dim = pool[0].record.descriptor.len();
    let mut ranked: Vec<&ScoredProposal> = pool.iter().collect();
    ranked.sort_by(|a, b| rank_order(a, b));
    ranked.truncate(m);
    let rows: Vec<Vec<T>> = ranked
        .iter()
        .map(|p| {
            p.record
                .descriptor
                .iter()
                .map(|&v| T::lit(f64::from(v)))
                .collect()
        })
        .collect();
    let ids = ranked.iter().map(|p| p.record.id).collect();
    ProposalFeatureSet::from_valid_rows(&rows, m, dim, ids)
}
