use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Spfno, SpfnoConfig};
use crate::container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::trainer::AdamState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPFNOCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Training context stored next to the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
    #[serde(default)]
    pub loss_history: Vec<f64>,
    /// Trainer-owned state (scheduler, best metric, training config).
    #[serde(default)]
    pub trainer: Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Spfno,
    pub optimizer: Option<AdamState>,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    config: SpfnoConfig,
    meta: CheckpointMeta,
    optimizer_step: Option<u64>,
}

impl Checkpoint {
    pub fn new(model: Spfno) -> Self {
        Self {
            model,
            optimizer: None,
            meta: CheckpointMeta::default(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            format: "spfno-checkpoint".into(),
            version: CHECKPOINT_VERSION,
            config: self.model.config().clone(),
            meta: self.meta.clone(),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
        };
        let params = self.model.params();
        let mut names: Vec<String> = params.iter().map(|(n, _)| format!("param/{n}")).collect();
        let mut tensors: Vec<&Tensor> = params.iter().map(|(_, t)| t).collect();
        if let Some(opt) = &self.optimizer {
            for (i, (n, _)) in params.iter().enumerate() {
                names.push(format!("adam.m/{n}"));
                tensors.push(&opt.m[i]);
                names.push(format!("adam.v/{n}"));
                tensors.push(&opt.v[i]);
            }
        }
        let arrays: Vec<(&str, &Tensor)> = names.iter().map(String::as_str).zip(tensors).collect();
        let header = serde_json::to_value(header)?;
        container::write(path, CHECKPOINT_MAGIC, header, &arrays)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, arrays) = container::read(path, CHECKPOINT_MAGIC)?;
        let version = header.get("version").and_then(Value::as_u64).unwrap_or(0) as u32;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header: Header = serde_json::from_value(header).map_err(|e| Error::CorruptFile {
            path: path.to_path_buf(),
            reason: format!("checkpoint header: {e}"),
        })?;
        let mut params = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, t) in arrays {
            if let Some(n) = name.strip_prefix("param/") {
                params.push((n.to_string(), t));
            } else if name.starts_with("adam.m/") {
                m.push(t);
            } else if name.starts_with("adam.v/") {
                v.push(t);
            } else {
                return Err(Error::CorruptFile {
                    path: path.to_path_buf(),
                    reason: format!("unexpected array '{name}'"),
                });
            }
        }
        let model = Spfno::from_parts(header.config, params)?;
        let optimizer = match header.optimizer_step {
            None => None,
            Some(step) => {
                let shapes_ok = m.len() == model.params().len()
                    && v.len() == m.len()
                    && model
                        .params()
                        .iter()
                        .zip(m.iter().zip(&v))
                        .all(|((_, p), (a, b))| p.shape() == a.shape() && p.shape() == b.shape());
                if !shapes_ok {
                    return Err(Error::shape("optimizer moments do not match the parameters"));
                }
                Some(AdamState { step, m, v })
            }
        };
        Ok(Self {
            model,
            optimizer,
            meta: header.meta,
        })
    }
}
