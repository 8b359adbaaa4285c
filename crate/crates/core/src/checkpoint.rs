//! JSON checkpoints: config snapshot, tensors with shapes, threshold, history.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, TrainConfig};
use crate::tape::Mat;
use crate::train::{EpochRecord, TrainedModel};

pub const CHECKPOINT_FORMAT: &str = "chase-ckpt-v1";

#[derive(Debug, Serialize, Deserialize)]
struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    config: TrainConfig,
    metric_names: Vec<String>,
    anomaly_threshold: f64,
    tensors: BTreeMap<String, Tensor>,
    history: Vec<EpochRecord>,
}

pub fn to_json(trained: &TrainedModel) -> Result<String> {
    let m = &trained.model;
    if !m.anomaly_threshold.is_finite() {
        return Err(Error::Checkpoint("anomaly threshold is not finite".into()));
    }
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        config: m.config.clone(),
        metric_names: m.metric_names.clone(),
        anomaly_threshold: m.anomaly_threshold,
        tensors: m
            .params
            .iter()
            .map(|(k, v)| {
                let (r, c) = v.dim();
                (
                    k.clone(),
                    Tensor {
                        shape: [r, c],
                        data: v.iter().copied().collect(),
                    },
                )
            })
            .collect(),
        history: trained.history.clone(),
    };
    serde_json::to_string(&file).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn from_json(text: &str) -> Result<TrainedModel> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(CHECKPOINT_FORMAT) => {}
        Some(other) => return Err(Error::Checkpoint(format!("unsupported format `{other}`"))),
        None => return Err(Error::Checkpoint("missing format tag".into())),
    }
    let file: CheckpointFile = serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if !file.anomaly_threshold.is_finite() {
        return Err(Error::Checkpoint("anomaly threshold is not finite".into()));
    }

    // The expected tensor layout follows from the config and metric names.
    let mut model = Model::new(file.config, file.metric_names).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut tensors = file.tensors;
    for (name, slot) in model.params.iter_mut() {
        let t = tensors
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        if t.shape != [slot.nrows(), slot.ncols()] {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                t.shape,
                slot.dim()
            )));
        }
        *slot = Mat::from_shape_vec((t.shape[0], t.shape[1]), t.data)
            .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
    }
    model.anomaly_threshold = file.anomaly_threshold;
    if file.history.windows(2).any(|w| w[1].epoch <= w[0].epoch) {
        return Err(Error::Checkpoint("history epochs are not increasing".into()));
    }
    Ok(TrainedModel {
        model,
        history: file.history,
    })
}

pub fn save_checkpoint(path: &Path, trained: &TrainedModel) -> Result<()> {
    fs::write(path, to_json(trained)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}
