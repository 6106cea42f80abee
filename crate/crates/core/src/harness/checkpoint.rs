use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::container::FeatureContainer;
use super::io::{read_json, write_json};
use crate::captioner::{CaptionModel, ModelConfig};
use crate::error::{Error, Result};
use crate::params::Parameters;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub vocab_size: usize,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes every parameter group as a single-column named tensor, plus a
/// JSON sidecar holding the model configuration.
pub fn save(model: &CaptionModel<f32>, path: &Path) -> Result<()> {
    let mut c = FeatureContainer::new(1);
    let mut err = None;
    model.for_each("", &mut |name, values| {
        if err.is_none() {
            err = c.push(name, values.len(), values).err();
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    c.write_file(path)?;
    write_json(
        &sidecar(path),
        &CheckpointMeta {
            config: model.config.clone(),
            vocab_size: model.vocab_size(),
        },
    )
}

pub fn load(path: &Path) -> Result<CaptionModel<f32>> {
    let meta: CheckpointMeta = read_json(&sidecar(path))?;
    let mut model = CaptionModel::build(&meta.config, meta.vocab_size)?;
    let c = FeatureContainer::read_file(path)?;
    if c.cols() != 1 {
        return Err(Error::format(
            "checkpoint tensors must be stored as a single column",
        ));
    }
    let expected = model.names();
    if c.index().len() != expected.len() {
        return Err(Error::format(format!(
            "checkpoint holds {} tensors, model expects {}",
            c.index().len(),
            expected.len()
        )));
    }
    let mut err = None;
    model.for_each_mut("", &mut |name, values| {
        if err.is_some() {
            return;
        }
        match c.tensor(name) {
            Ok(src) if src.len() == values.len() => values.copy_from_slice(src),
            Ok(src) => {
                err = Some(Error::format(format!(
                    "tensor {name:?} has {} values, model expects {}",
                    src.len(),
                    values.len()
                )))
            }
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if !model.is_finite() {
        return Err(Error::numerical(
            "checkpoint contains non-finite parameters",
        ));
    }
    Ok(model)
}
