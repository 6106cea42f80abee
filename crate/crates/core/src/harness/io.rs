//! JSON-lines records exchanged between CLI stages.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::decoder::GroundedWord;
use crate::error::{Error, Result};
use crate::proposals::{BoundingBox, ProposalRecord};

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub video_id: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub video_id: String,
    pub sentences: Vec<String>,
}

/// Human SVO annotation of one sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub sentence_id: usize,
    pub subject: Option<String>,
    pub verb: Option<String>,
    pub object: Option<String>,
}

/// One proposal; its descriptor is row `descriptor_offset` of the tensor
/// named after the video in the descriptor container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalLine {
    pub video_id: String,
    pub id: u64,
    pub first_frame: usize,
    pub boxes: Vec<[f64; 4]>,
    pub descriptor_offset: usize,
}

impl ProposalLine {
    pub fn to_record(&self, descriptor: Vec<f32>) -> ProposalRecord {
        ProposalRecord {
            id: self.id,
            first_frame: self.first_frame,
            boxes: self
                .boxes
                .iter()
                .map(|b| BoundingBox::from_array(*b))
                .collect(),
            descriptor,
        }
    }
}

/// Selected pool for a video: feature rows of the pool container in order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolLine {
    pub video_id: String,
    pub source_ids: Vec<u64>,
    pub valid: usize,
}

/// Planted proposal behind each content word; read only by evaluation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub video_id: String,
    pub subject: String,
    pub subject_proposal: u64,
    pub object: String,
    pub object_proposal: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionLine {
    pub video_id: String,
    pub sentence: String,
    pub log_prob: f64,
    pub grounding: Vec<GroundedWord>,
}
