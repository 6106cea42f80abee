//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Every key must be consumed by
//! some section of the pipeline, so typos surface as errors.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::captioner::{ModelConfig, Selection, TrainConfig};
use crate::decoder::BeamConfig;
use crate::error::{Error, Result};
use crate::proposals::FilterConfig;

use super::synth::SyntheticCorpusSpec;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

pub const KNOWN_KEYS: &[&str] = &[
    "hidden",
    "embedding",
    "attention",
    "dropout",
    "init_range",
    "forget_bias",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "clip_norm",
    "epochs",
    "batch_size",
    "max_steps",
    "select_by",
    "val_beam",
    "val_min_len",
    "seed",
    "beam",
    "min_len",
    "max_len",
    "min_frames",
    "min_area_fraction",
    "dedup_threshold",
    "frame_width",
    "frame_height",
    "m",
    "det_window",
    "lambda_grid",
    "lssvm_bias",
    "n_train",
    "n_val",
    "n_test",
    "dim",
    "subjects",
    "verbs",
    "objects",
    "noise",
    "sentences_per_video",
    "frames",
    "classes",
];

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!("config line {}: expected key = value", i + 1))
            })?;
            let k = k.trim();
            if !KNOWN_KEYS.contains(&k) {
                return Err(Error::invalid(format!(
                    "config line {}: unknown key {k:?}",
                    i + 1
                )));
            }
            if values.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::invalid(format!(
                    "config line {}: duplicate key {k:?}",
                    i + 1
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.values
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::invalid(format!("config key {key}: cannot parse {v:?}")))
            })
            .transpose()
    }

    fn fill<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn apply_model(&self, cfg: &mut ModelConfig) -> Result<()> {
        self.fill("hidden", &mut cfg.hidden)?;
        self.fill("embedding", &mut cfg.embedding)?;
        cfg.attention = cfg.hidden;
        self.fill("attention", &mut cfg.attention)?;
        self.fill("dropout", &mut cfg.dropout)?;
        self.fill("init_range", &mut cfg.init_range)?;
        self.fill("forget_bias", &mut cfg.forget_bias)?;
        self.fill("learning_rate", &mut cfg.optimizer.learning_rate)?;
        self.fill("beta1", &mut cfg.optimizer.beta1)?;
        self.fill("beta2", &mut cfg.optimizer.beta2)?;
        self.fill("epsilon", &mut cfg.optimizer.epsilon)?;
        self.fill("clip_norm", &mut cfg.optimizer.clip_norm)?;
        self.fill("seed", &mut cfg.seed)
    }

    pub fn apply_train(&self, cfg: &mut TrainConfig) -> Result<()> {
        self.fill("epochs", &mut cfg.epochs)?;
        self.fill("batch_size", &mut cfg.batch_size)?;
        if let Some(n) = self.get("max_steps")? {
            cfg.max_steps = Some(n);
        }
        if let Some(s) = self.get::<String>("select_by")? {
            cfg.select_by = match s.as_str() {
                "loss" => Selection::Loss,
                "bleu" => Selection::Bleu,
                other => {
                    return Err(Error::invalid(format!(
                        "select_by must be loss or bleu, got {other:?}"
                    )))
                }
            };
        }
        self.fill("val_beam", &mut cfg.val_beam)?;
        self.fill("val_min_len", &mut cfg.val_min_len)?;
        self.fill("seed", &mut cfg.seed)
    }

    pub fn apply_beam(&self, cfg: &mut BeamConfig) -> Result<()> {
        self.fill("beam", &mut cfg.beam)?;
        self.fill("min_len", &mut cfg.min_len)?;
        self.fill("max_len", &mut cfg.max_len)
    }

    pub fn apply_filter(&self, cfg: &mut FilterConfig) -> Result<()> {
        self.fill("min_frames", &mut cfg.min_frames)?;
        self.fill("min_area_fraction", &mut cfg.min_area_fraction)?;
        self.fill("dedup_threshold", &mut cfg.dedup_threshold)?;
        self.fill("frame_width", &mut cfg.frame_width)?;
        self.fill("frame_height", &mut cfg.frame_height)
    }

    pub fn apply_synth(&self, spec: &mut SyntheticCorpusSpec) -> Result<()> {
        self.fill("n_train", &mut spec.n_train)?;
        self.fill("n_val", &mut spec.n_val)?;
        self.fill("n_test", &mut spec.n_test)?;
        self.fill("m", &mut spec.m)?;
        self.fill("dim", &mut spec.dim)?;
        self.fill("subjects", &mut spec.subjects)?;
        self.fill("verbs", &mut spec.verbs)?;
        self.fill("objects", &mut spec.objects)?;
        self.fill("noise", &mut spec.noise)?;
        self.fill("sentences_per_video", &mut spec.sentences_per_video)?;
        self.fill("frames", &mut spec.frames)?;
        self.fill("classes", &mut spec.classes)?;
        self.fill("frame_width", &mut spec.frame_width)?;
        self.fill("frame_height", &mut spec.frame_height)?;
        self.fill("seed", &mut spec.seed)
    }

    /// Comma separated λ values for the concept classifiers.
    pub fn lambda_grid(&self) -> Result<Option<Vec<f64>>> {
        let Some(raw) = self.values.get("lambda_grid") else {
            return Ok(None);
        };
        let grid = raw
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| *x > 0.0)
                    .ok_or_else(|| Error::invalid(format!("lambda_grid: bad value {v:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(grid))
    }
}
