//! Versioned binary container shared by neural and baseline models.
//!
//! Layout: 16-byte magic, `u32` version, `u32` kind tag, `u32` header
//! length, UTF-8 JSON header, `u64` parameter count, then the parameters
//! as little-endian `f32`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::neural::{Network, NetworkConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 16] = b"NEUROBIT-CKPT\0\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Neural = 0,
    Svm = 1,
    Mahalanobis = 2,
}

impl ModelKind {
    fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(ModelKind::Neural),
            1 => Ok(ModelKind::Svm),
            2 => Ok(ModelKind::Mahalanobis),
            t => Err(Error::Checkpoint(format!("unknown model kind tag {t}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub header: Value,
    pub params: Vec<f32>,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(40 + header.len() + 4 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.kind as u32).to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let take = |at: usize, n: usize| bytes.get(at..at + n).ok_or_else(|| bad("truncated checkpoint"));
        let u32_at = |at: usize| -> Result<u32> { Ok(u32::from_le_bytes(take(at, 4)?.try_into().expect("4 bytes"))) };
        if take(0, 16)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32_at(16)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = ModelKind::from_tag(u32_at(20)?)?;
        let hlen = u32_at(24)? as usize;
        let header: Value = serde_json::from_slice(take(28, hlen)?)?;
        let at = 28 + hlen;
        let count = u64::from_le_bytes(take(at, 8)?.try_into().expect("8 bytes")) as usize;
        let body = take(at + 8, count.checked_mul(4).ok_or_else(|| bad("parameter count overflow"))?)?;
        if bytes.len() != at + 8 + 4 * count {
            return Err(bad("trailing bytes after parameters"));
        }
        let params = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Checkpoint { kind, header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds a {:?} model, expected {:?}",
                self.kind, kind
            )));
        }
        Ok(())
    }
}

/// Flattens tensors to `f32` in order.
pub fn flatten_f32<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> Vec<f32> {
    tensors
        .into_iter()
        .flat_map(|t| t.data().iter().map(|&v| v as f32))
        .collect()
}

/// Refills `targets` from `values`, which must hold exactly their total size.
pub fn unflatten_into(values: &[f32], targets: Vec<&mut [f64]>) -> Result<()> {
    let need: usize = targets.iter().map(|t| t.len()).sum();
    if need != values.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} values, model needs {need}",
            values.len()
        )));
    }
    let mut at = 0;
    for t in targets {
        for (d, &v) in t.iter_mut().zip(&values[at..]) {
            *d = f64::from(v);
        }
        at += t.len();
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct NeuralHeader {
    config: NetworkConfig,
    seed: u64,
    epoch: usize,
}

impl Network {
    /// Parameters in declaration order followed by batch-norm running
    /// statistics.
    pub fn to_checkpoint(&self, seed: u64, epoch: usize) -> Result<Checkpoint> {
        let header = serde_json::to_value(NeuralHeader {
            config: self.config.clone(),
            seed,
            epoch,
        })?;
        let mut params = flatten_f32(self.params());
        for s in self.running_stats() {
            params.extend(s.iter().map(|&v| v as f32));
        }
        Ok(Checkpoint {
            kind: ModelKind::Neural,
            header,
            params,
        })
    }

    /// Rebuilds a network; returns it with the stored seed and epoch.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Network, u64, usize)> {
        ckpt.expect_kind(ModelKind::Neural)?;
        let h: NeuralHeader = serde_json::from_value(ckpt.header.clone())?;
        let mut net = Network::new(h.config, h.seed)?;
        let n = net.n_params();
        if ckpt.params.len() < n {
            return Err(Error::Checkpoint("checkpoint is missing parameters".into()));
        }
        let (weights, stats) = ckpt.params.split_at(n);
        unflatten_into(weights, net.params_mut().into_iter().map(Tensor::data_mut).collect())?;
        let mut targets: Vec<&mut [f64]> = Vec::new();
        for b in net.norms.iter_mut() {
            targets.push(&mut b.running_mean);
            targets.push(&mut b.running_var);
        }
        unflatten_into(stats, targets)?;
        Ok((net, h.seed, h.epoch))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip_and_corruption() {
        let c = Checkpoint {
            kind: ModelKind::Svm,
            header: serde_json::json!({"a": 1}),
            params: vec![1.5, -2.25, 0.0],
        };
        let bytes = c.encode().unwrap();
        assert_eq!(Checkpoint::decode(&bytes).unwrap(), c);
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::decode(&bad).is_err());
        let mut bad = bytes;
        bad[20] = 9;
        assert!(Checkpoint::decode(&bad).is_err());
    }
}
