use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetConfig, Parameterized, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub architecture_id: String,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    /// Text fields the network encodes, in input order.
    pub fields: Vec<String>,
}

impl CheckpointHeader {
    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            vocab_size: self.vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Serialized parameters of one network. Floats are written in shortest
/// round-trip form, so saving the same weights always yields the same bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: BTreeMap<String, TensorRecord>,
}

impl Checkpoint {
    pub fn capture(header: CheckpointHeader, model: &impl Parameterized) -> Self {
        let params = model
            .named_tensors()
            .into_iter()
            .map(|(name, t)| {
                (
                    name,
                    TensorRecord {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect();
        Checkpoint { header, params }
    }

    /// Overwrites `model`'s parameters. Every tensor must be present with the
    /// same shape and no extra tensors may appear.
    pub fn restore_into(&self, model: &mut impl Parameterized) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> = model
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "checkpoint holds {} tensors, model has {}",
                self.params.len(),
                expected.len()
            )));
        }
        let mut loaded = Vec::with_capacity(expected.len());
        for (name, shape) in &expected {
            let rec = self
                .params
                .get(name)
                .ok_or_else(|| Error::Shape(format!("checkpoint lacks tensor {name}")))?;
            if &rec.shape != shape {
                return Err(Error::Shape(format!(
                    "tensor {name}: checkpoint shape {:?}, model shape {shape:?}",
                    rec.shape
                )));
            }
            loaded.push(Tensor::from_vec(rec.shape.clone(), rec.data.clone())?);
        }
        for (dst, src) in model.tensors_mut().into_iter().zip(loaded) {
            *dst = src;
        }
        Ok(())
    }

    fn check_version(self) -> Result<Self> {
        if self.header.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::config(format!(
                "checkpoint format version {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                self.header.format_version
            )));
        }
        Ok(self)
    }

    pub fn to_writer(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn from_reader(r: impl Read) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(r)?;
        ck.check_version()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        self.to_writer(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(fs::File::open(path)?);
        Self::from_reader(f)
    }
}
