//! Checkpoint files (versioned JSON) and the per-epoch loss log (CSV).

use serde::{Deserialize, Serialize};

use super::params::{NetworkArchitecture, NetworkParameters, ParamTensor};
use super::tensor::Scalar;
use super::train::{Checkpoint, EpochRecord};
use crate::volume::Shape;
use crate::{Error, Result};

const FORMAT: &str = "nephroseg-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorFile {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    precision: String,
    architecture: NetworkArchitecture,
    init: String,
    parameter_count: usize,
    patch: Shape,
    epoch: usize,
    fold: usize,
    validation_loss: f64,
    tensors: Vec<TensorFile>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_json(&self) -> Result<String> {
        let p = &self.parameters;
        let file = CheckpointFile {
            format: FORMAT.into(),
            version: VERSION,
            precision: T::NAME.into(),
            architecture: p.architecture(),
            init: p.init().into(),
            parameter_count: p.parameter_count(),
            patch: self.patch,
            epoch: self.epoch,
            fold: self.fold,
            validation_loss: self.validation_loss,
            tensors: p
                .tensors()
                .iter()
                .map(|t| TensorFile {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    trainable: t.trainable,
                    values: t.values.iter().map(|v| v.f64()).collect(),
                })
                .collect(),
        };
        serde_json::to_string(&file).map_err(|e| Error::Format(e.to_string()))
    }

    /// Parse a checkpoint, converting stored values to `T`.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
        if file.format != FORMAT {
            return Err(Error::Format(format!("not a checkpoint file (format `{}`)", file.format)));
        }
        if file.version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", file.version)));
        }
        let tensors = file
            .tensors
            .into_iter()
            .map(|t| ParamTensor {
                name: t.name,
                shape: t.shape,
                trainable: t.trainable,
                values: t.values.into_iter().map(T::of).collect(),
            })
            .collect();
        let parameters = NetworkParameters::from_tensors(file.architecture, &file.init, tensors)?;
        if parameters.parameter_count() != file.parameter_count {
            return Err(Error::Validation("checkpoint parameter count does not match its tensors".into()));
        }
        file.architecture.check_patch(file.patch)?;
        Ok(Self {
            parameters,
            epoch: file.epoch,
            fold: file.fold,
            validation_loss: file.validation_loss,
            patch: file.patch,
        })
    }
}

/// CSV with header `epoch,fold,train_loss,val_loss`.
pub fn loss_log_csv(log: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,fold,train_loss,val_loss\n");
    for r in log {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.fold, r.train_loss, r.val_loss));
    }
    out
}
