//! Self-describing checkpoints: a safetensors archive whose header metadata
//! carries the format version, configurations and loss history.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{ModelError, Result};
use crate::losses::{LossBreakdown, LossWeights};
use crate::net::{GroundingNet, NetConfig};

pub const FORMAT: &str = "wwbl-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub samples: usize,
    /// Sample-weighted means over the epoch.
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net_config: NetConfig,
    pub train_config: TrainConfig,
    pub loss_weights: LossWeights,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochStats>,
    /// Network weights and normalization statistics, by name.
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn capture(
        net: &GroundingNet,
        train_config: &TrainConfig,
        loss_weights: &LossWeights,
        epoch: usize,
        history: Vec<EpochStats>,
    ) -> Result<Self> {
        // deep copies: the live variables keep changing after this point
        let tensors = net
            .params()
            .named_tensors()
            .into_iter()
            .map(|(n, t)| Ok((n, t.copy()?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            net_config: net.config().clone(),
            train_config: train_config.clone(),
            loss_weights: *loss_weights,
            epoch,
            history,
            tensors,
        })
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.history.last().map(|s| s.loss.total)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut meta = HashMap::new();
        meta.insert("format".to_string(), FORMAT.to_string());
        meta.insert("version".to_string(), VERSION.to_string());
        meta.insert("net_config".to_string(), to_json(&self.net_config)?);
        meta.insert("train_config".to_string(), to_json(&self.train_config)?);
        meta.insert("loss_weights".to_string(), to_json(&self.loss_weights)?);
        meta.insert("epoch".to_string(), self.epoch.to_string());
        meta.insert("history".to_string(), to_json(&self.history)?);

        let mut payloads = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
            let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
            payloads.push((name.clone(), t.dims().to_vec(), bytes));
        }
        let views = payloads
            .iter()
            .map(|(n, shape, bytes)| TensorView::new(Dtype::F32, shape.clone(), bytes).map(|v| (n.clone(), v)))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let bytes = safetensors::serialize(views, Some(meta)).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Ok(sort_header(bytes))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|source| ModelError::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| ModelError::Checkpoint(m);
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| bad(e.to_string()))?;
        let meta = header
            .metadata()
            .clone()
            .ok_or_else(|| bad("missing metadata".into()))?;
        let field = |k: &str| meta.get(k).ok_or_else(|| bad(format!("missing metadata field {k}")));
        if field("format")? != FORMAT {
            return Err(bad(format!("not a {FORMAT} file")));
        }
        let version: u32 = field("version")?
            .parse()
            .map_err(|_| bad("unreadable version".into()))?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version} (expected {VERSION})")));
        }
        let net_config: NetConfig = from_json("net_config", field("net_config")?)?;
        let train_config: TrainConfig = from_json("train_config", field("train_config")?)?;
        let loss_weights: LossWeights = from_json("loss_weights", field("loss_weights")?)?;
        let history: Vec<EpochStats> = from_json("history", field("history")?)?;
        let epoch: usize = field("epoch")?.parse().map_err(|_| bad("unreadable epoch".into()))?;
        if epoch > train_config.epochs {
            return Err(bad(format!(
                "epoch {epoch} exceeds configured epochs {}",
                train_config.epochs
            )));
        }

        let st = SafeTensors::deserialize(bytes).map_err(|e| bad(e.to_string()))?;
        let mut tensors = Vec::new();
        let mut entries = st.tensors();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for (name, view) in entries {
            if view.dtype() != Dtype::F32 {
                return Err(bad(format!("{name}: expected f32 data")));
            }
            let values: Vec<f32> = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((name, Tensor::from_vec(values, view.shape(), &Device::Cpu)?));
        }
        Ok(Self {
            net_config,
            train_config,
            loss_weights,
            epoch,
            history,
            tensors,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Rebuild the network with these weights.
    pub fn restore(&self, device: &Device) -> Result<GroundingNet> {
        let cfg = NetConfig {
            // weights come from the checkpoint, never from a side file
            encoder_weights: None,
            ..self.net_config.clone()
        };
        let net = GroundingNet::new(cfg, 0, device)?;
        let map: HashMap<String, Tensor> = self.tensors.iter().cloned().collect();
        net.params().load(&map, false)?;
        Ok(net)
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| ModelError::Checkpoint(e.to_string()))
}

/// Rewrites the JSON header with sorted keys, so equal checkpoints give
/// equal bytes. The metadata map is a `HashMap` and its order varies
/// between processes.
fn sort_header(mut bytes: Vec<u8>) -> Vec<u8> {
    let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let Ok(header) = serde_json::from_slice::<serde_json::Value>(&bytes[8..8 + n]) else {
        return bytes;
    };
    let sorted = header.to_string();
    if sorted.len() <= n {
        bytes[8..8 + sorted.len()].copy_from_slice(sorted.as_bytes());
        bytes[8 + sorted.len()..8 + n].fill(b' ');
    }
    bytes
}

fn from_json<T: serde::de::DeserializeOwned>(key: &str, s: &str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| ModelError::Checkpoint(format!("{key}: {e}")))
}
