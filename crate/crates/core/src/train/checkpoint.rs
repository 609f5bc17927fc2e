//! Checkpoints are tensor archives: `param/<name>` and `velocity/<name>` for
//! every model parameter, with the model spec, init seed, progress counters
//! and the training config in the JSON header.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::archive::{NamedTensor, TensorArchive};
use crate::error::{Error, Result};
use crate::net::{build_model, Model, ModelSpec};

const FORMAT: &str = "headpose-checkpoint/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    model_spec: ModelSpec,
    model_seed: u64,
    epoch: usize,
    step: u64,
    config: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub velocity: Vec<f64>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn to_archive(&self) -> Result<TensorArchive> {
        let meta = CheckpointMeta {
            format: FORMAT.into(),
            model_spec: self.model.spec().clone(),
            model_seed: self.model.seed(),
            epoch: self.epoch,
            step: self.step,
            config: self.config.clone(),
        };
        let params = self.model.params();
        let mut tensors = Vec::with_capacity(2 * params.entries().len());
        for (prefix, values) in [("param", params.values()), ("velocity", &self.velocity[..])] {
            for e in params.entries() {
                tensors.push(NamedTensor {
                    name: format!("{prefix}/{}", e.name),
                    shape: e.shape.clone(),
                    data: values[e.offset..e.offset + e.len()].iter().map(|&v| v as f32).collect(),
                });
            }
        }
        Ok(TensorArchive {
            meta: serde_json::to_value(meta)?,
            tensors,
        })
    }

    pub fn from_archive(archive: &TensorArchive, context: &Path) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_value(archive.meta.clone())
            .map_err(|e| Error::IncompatibleCheckpoint(format!("{}: {e}", context.display())))?;
        if meta.format != FORMAT {
            return Err(Error::IncompatibleCheckpoint(format!(
                "{}: unknown format {:?}",
                context.display(),
                meta.format
            )));
        }
        // The stored values replace any reference weights, so don't require
        // the original weight file to still exist.
        let mut spec = meta.model_spec.clone();
        spec.backbone.pretrained_weights = None;
        let mut model = build_model(&spec, meta.model_seed)?;
        let n = model.params().len();
        let mut values = vec![0.0; n];
        let mut velocity = vec![0.0; n];
        for (prefix, out) in [("param", &mut values), ("velocity", &mut velocity)] {
            for e in model.params().entries() {
                let name = format!("{prefix}/{}", e.name);
                let t = archive.get(&name).ok_or_else(|| {
                    Error::IncompatibleCheckpoint(format!("{}: missing tensor {name}", context.display()))
                })?;
                if t.shape != e.shape {
                    return Err(Error::IncompatibleCheckpoint(format!(
                        "{}: tensor {name} has shape {:?}, model expects {:?}",
                        context.display(),
                        t.shape,
                        e.shape
                    )));
                }
                for (o, &v) in out[e.offset..e.offset + e.len()].iter_mut().zip(&t.data) {
                    *o = v as f64;
                }
            }
        }
        model.load_values(&values)?;
        Ok(Checkpoint {
            model,
            velocity,
            epoch: meta.epoch,
            step: meta.step,
            config: meta.config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&TensorArchive::load(path)?, path)
    }
}
