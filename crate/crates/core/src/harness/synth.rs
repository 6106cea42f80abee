//! Synthetic corpus with planted grounding.
//!
//! Each video has one subject and one object. Exactly one proposal carries
//! the subject's one-hot code in descriptor block `[0, S)` and one carries
//! the object's code in block `[S, S + O)`; every descriptor gets Gaussian
//! noise and the remaining proposals are noise only. The caption is
//! `a <subject> is <verb> a <object>` where the verb is a fixed function of
//! the pair.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::container::FeatureContainer;
use super::io::{
    write_json, write_jsonl, AlignmentRecord, AnnotationRecord, ProposalLine, ReferenceRecord,
    Split, SplitRecord,
};
use crate::error::{Error, Result};
use crate::proposals::{BoundingBox, Detection, ProposalRecord};

const SUBJECTS: [&str; 8] = [
    "man", "woman", "boy", "girl", "dog", "cat", "horse", "monkey",
];
const OBJECTS: [&str; 8] = [
    "ball", "guitar", "bike", "book", "phone", "cake", "kite", "box",
];
const VERBS: [&str; 8] = [
    "playing", "riding", "holding", "throwing", "eating", "carrying", "pushing", "watching",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Proposals per video.
    pub m: usize,
    /// Descriptor width.
    pub dim: usize,
    pub subjects: usize,
    pub verbs: usize,
    pub objects: usize,
    pub noise: f64,
    pub sentences_per_video: usize,
    pub frames: usize,
    pub classes: usize,
    pub frame_width: f64,
    pub frame_height: f64,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_val: 25,
            n_test: 50,
            m: 8,
            dim: 32,
            subjects: 5,
            verbs: 4,
            objects: 5,
            noise: 0.1,
            sentences_per_video: 2,
            frames: 48,
            classes: 10,
            frame_width: 320.0,
            frame_height: 240.0,
            seed: 0,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let limit = SUBJECTS.len();
        for (name, n) in [
            ("subjects", self.subjects),
            ("verbs", self.verbs),
            ("objects", self.objects),
        ] {
            if !(2..=limit).contains(&n) {
                return Err(Error::invalid(format!(
                    "{name} must be between 2 and {limit}, got {n}"
                )));
            }
        }
        if self.dim < self.subjects + self.objects {
            return Err(Error::invalid(format!(
                "descriptor width {} cannot hold {} subject and {} object codes",
                self.dim, self.subjects, self.objects
            )));
        }
        if self.m < 2 {
            return Err(Error::invalid(
                "at least two proposals per video are needed",
            ));
        }
        if self.n_train == 0 || self.sentences_per_video == 0 {
            return Err(Error::invalid("corpus needs training videos and sentences"));
        }
        if self.frames < 15 || self.classes == 0 {
            return Err(Error::invalid(
                "videos need at least 15 frames and one class",
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("noise must be a non-negative number"));
        }
        Ok(())
    }

    pub fn verb_for(&self, subject: usize, object: usize) -> usize {
        (subject + 2 * object) % self.verbs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticVideo {
    pub video_id: String,
    pub split: Split,
    pub subject: usize,
    pub verb: usize,
    pub object: usize,
    pub sentence: String,
    pub proposals: Vec<ProposalRecord>,
    /// Positions of the planted proposals within `proposals`.
    pub subject_position: usize,
    pub object_position: usize,
    pub frame_cls: Vec<Vec<f32>>,
    pub detections: Vec<Vec<Detection>>,
}

impl SyntheticVideo {
    /// Per frame and class, the highest detection score (0 when absent).
    pub fn frame_det(&self, classes: usize) -> Vec<Vec<f32>> {
        self.detections
            .iter()
            .map(|dets| {
                let mut row = vec![0.0f32; classes];
                for d in dets {
                    row[d.class] = row[d.class].max(d.score as f32);
                }
                row
            })
            .collect()
    }
}

pub fn subject_word(i: usize) -> &'static str {
    SUBJECTS[i]
}

pub fn object_word(i: usize) -> &'static str {
    OBJECTS[i]
}

pub fn verb_word(i: usize) -> &'static str {
    VERBS[i]
}

fn grid_box(
    slot: usize,
    m: usize,
    spec: &SyntheticCorpusSpec,
    rng: &mut ChaCha8Rng,
) -> BoundingBox {
    let cols = 4.min(m);
    let rows = m.div_ceil(cols);
    let cw = spec.frame_width / cols as f64;
    let ch = spec.frame_height / rows as f64;
    let (cx, cy) = ((slot % cols) as f64 * cw, (slot / cols) as f64 * ch);
    let mx = rng.random_range(0.0..0.2) * cw;
    let my = rng.random_range(0.0..0.2) * ch;
    BoundingBox::new(cx + mx, cy + my, cx + cw - mx, cy + ch - my)
}

pub fn generate(spec: &SyntheticCorpusSpec) -> Result<Vec<SyntheticVideo>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let total = spec.n_train + spec.n_val + spec.n_test;
    let mut videos = Vec::with_capacity(total);
    for v in 0..total {
        let split = if v < spec.n_train {
            Split::Train
        } else if v < spec.n_train + spec.n_val {
            Split::Val
        } else {
            Split::Test
        };
        let subject = rng.random_range(0..spec.subjects);
        let object = rng.random_range(0..spec.objects);
        let verb = spec.verb_for(subject, object);
        let mut positions: Vec<usize> = (0..spec.m).collect();
        positions.shuffle(&mut rng);
        let (subject_position, object_position) = (positions[0], positions[1]);

        let mut proposals = Vec::with_capacity(spec.m);
        for k in 0..spec.m {
            let mut desc = vec![0.0f64; spec.dim];
            if k == subject_position {
                desc[subject] = 1.0;
            } else if k == object_position {
                desc[spec.subjects + object] = 1.0;
            }
            let descriptor = desc
                .iter()
                .map(|&x| {
                    if spec.noise > 0.0 {
                        (x + normal.sample(&mut rng)) as f32
                    } else {
                        x as f32
                    }
                })
                .collect();
            let len = rng.random_range(15..=spec.frames);
            let first_frame = rng.random_range(0..=spec.frames - len);
            let b = grid_box(k, spec.m, spec, &mut rng);
            proposals.push(ProposalRecord {
                id: k as u64,
                first_frame,
                boxes: vec![b; len],
                descriptor,
            });
        }

        let frame_cls = (0..spec.frames)
            .map(|_| (0..spec.classes).map(|_| rng.random::<f32>()).collect())
            .collect();
        let detections = (0..spec.frames)
            .map(|_| {
                let n = rng.random_range(0..=3);
                (0..n)
                    .map(|_| {
                        let slot = rng.random_range(0..spec.m);
                        Detection {
                            bbox: grid_box(slot, spec.m, spec, &mut rng),
                            class: rng.random_range(0..spec.classes),
                            score: f64::from(rng.random::<f32>()),
                        }
                    })
                    .collect()
            })
            .collect();

        videos.push(SyntheticVideo {
            video_id: format!("vid{v:04}"),
            split,
            subject,
            verb,
            object,
            sentence: format!(
                "a {} is {} a {}",
                SUBJECTS[subject], VERBS[verb], OBJECTS[object]
            ),
            proposals,
            subject_position,
            object_position,
            frame_cls,
            detections,
        });
    }
    Ok(videos)
}

/// Writes the corpus files into `dir`.
pub fn write_corpus(spec: &SyntheticCorpusSpec, dir: &Path) -> Result<Vec<SyntheticVideo>> {
    let videos = generate(spec)?;
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("corpus.json"), spec)?;

    let splits: Vec<_> = videos
        .iter()
        .map(|v| SplitRecord {
            video_id: v.video_id.clone(),
            split: v.split,
        })
        .collect();
    write_jsonl(&dir.join("split.jsonl"), &splits)?;

    let refs: Vec<_> = videos
        .iter()
        .map(|v| ReferenceRecord {
            video_id: v.video_id.clone(),
            sentences: vec![v.sentence.clone(); spec.sentences_per_video],
        })
        .collect();
    write_jsonl(&dir.join("references.jsonl"), &refs)?;

    let mut notes = Vec::new();
    for v in &videos {
        for sentence_id in 0..spec.sentences_per_video {
            notes.push(AnnotationRecord {
                video_id: v.video_id.clone(),
                sentence_id,
                subject: Some(SUBJECTS[v.subject].to_string()),
                verb: Some(VERBS[v.verb].to_string()),
                object: Some(OBJECTS[v.object].to_string()),
            });
        }
    }
    write_jsonl(&dir.join("annotations.jsonl"), &notes)?;

    let mut lines = Vec::new();
    let mut descriptors = FeatureContainer::new(spec.dim);
    let mut cls = FeatureContainer::new(spec.classes);
    let mut det = FeatureContainer::new(spec.classes);
    let mut raw_dets = FeatureContainer::new(7);
    for v in &videos {
        for (k, p) in v.proposals.iter().enumerate() {
            lines.push(ProposalLine {
                video_id: v.video_id.clone(),
                id: p.id,
                first_frame: p.first_frame,
                boxes: p.boxes.iter().map(BoundingBox::to_array).collect(),
                descriptor_offset: k,
            });
        }
        let rows: Vec<&[f32]> = v
            .proposals
            .iter()
            .map(|p| p.descriptor.as_slice())
            .collect();
        descriptors.push_rows(&v.video_id, &rows)?;
        cls.push_rows(&v.video_id, &v.frame_cls)?;
        det.push_rows(&v.video_id, &v.frame_det(spec.classes))?;
        let flat: Vec<[f32; 7]> = v
            .detections
            .iter()
            .enumerate()
            .flat_map(|(f, dets)| {
                dets.iter().map(move |d| {
                    let b = d.bbox.to_array();
                    [
                        f as f32,
                        d.class as f32,
                        d.score as f32,
                        b[0] as f32,
                        b[1] as f32,
                        b[2] as f32,
                        b[3] as f32,
                    ]
                })
            })
            .collect();
        raw_dets.push_rows(&v.video_id, &flat)?;
    }
    write_jsonl(&dir.join("proposals.jsonl"), &lines)?;
    descriptors.write_file(&dir.join("descriptors.gcap"))?;
    cls.write_file(&dir.join("frame_cls.gcap"))?;
    det.write_file(&dir.join("frame_det.gcap"))?;
    raw_dets.write_file(&dir.join("detections.gcap"))?;

    let align: Vec<_> = videos
        .iter()
        .map(|v| AlignmentRecord {
            video_id: v.video_id.clone(),
            subject: SUBJECTS[v.subject].to_string(),
            subject_proposal: v.proposals[v.subject_position].id,
            object: OBJECTS[v.object].to_string(),
            object_proposal: v.proposals[v.object_position].id,
        })
        .collect();
    write_jsonl(&dir.join("alignment.jsonl"), &align)?;
    Ok(videos)
}
