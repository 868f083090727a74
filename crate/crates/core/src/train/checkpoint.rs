use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{OptimState, TrainConfig};
use crate::error::{Result, SabrError};
use crate::model::{ModelConfig, SabrDit};
use crate::tensor::{RngStream, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SABRCKP1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Complete training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Optimizer steps completed.
    pub step: u64,
    pub epoch: usize,
    pub losses: Vec<f64>,
    pub manifest_hash: String,
    pub names: Vec<String>,
    pub weights: Vec<Tensor<f32>>,
    pub ema: Option<Vec<Tensor<f32>>>,
    pub optim: Option<OptimState<f32>>,
}

#[derive(Serialize, Deserialize)]
struct Field {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    model: ModelConfig,
    train: TrainConfig,
    step: u64,
    epoch: usize,
    losses: Vec<f64>,
    manifest_hash: String,
    adam_step: Option<u64>,
    fields: Vec<Field>,
}

const SECTIONS: [&str; 4] = ["weights", "ema", "adam_m", "adam_v"];

impl Checkpoint {
    pub fn weights_model(&self) -> Result<SabrDit<f32>> {
        SabrDit::from_params(self.model.clone(), self.names.clone(), self.weights.clone())
    }

    /// Model carrying the EMA shadow weights, the ones every evaluation uses.
    pub fn ema_model(&self) -> Result<SabrDit<f32>> {
        let ema = self
            .ema
            .as_ref()
            .ok_or_else(|| SabrError::Contract("checkpoint has no EMA weights".into()))?;
        SabrDit::from_params(self.model.clone(), self.names.clone(), ema.clone())
    }

    fn sections(&self) -> Vec<(&'static str, &[Tensor<f32>])> {
        let mut out: Vec<(&'static str, &[Tensor<f32>])> = vec![(SECTIONS[0], &self.weights)];
        if let Some(e) = &self.ema {
            out.push((SECTIONS[1], e));
        }
        if let Some(o) = &self.optim {
            out.push((SECTIONS[2], &o.m));
            out.push((SECTIONS[3], &o.v));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut fields = Vec::new();
        let mut payload = Vec::new();
        for (section, tensors) in self.sections() {
            if tensors.len() != self.names.len() {
                return Err(SabrError::Contract(format!(
                    "{section} holds {} tensors for {} names",
                    tensors.len(),
                    self.names.len()
                )));
            }
            for (name, t) in self.names.iter().zip(tensors) {
                fields.push(Field {
                    name: format!("{section}/{name}"),
                    shape: t.shape().to_vec(),
                });
                for v in t.data() {
                    payload.extend(v.to_le_bytes());
                }
            }
        }
        let header = Header {
            version: CHECKPOINT_VERSION,
            model: self.model.clone(),
            train: self.train.clone(),
            step: self.step,
            epoch: self.epoch,
            losses: self.losses.clone(),
            manifest_hash: self.manifest_hash.clone(),
            adam_step: self.optim.as_ref().map(|o| o.step),
            fields,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + payload.len());
        out.extend(CHECKPOINT_MAGIC);
        out.extend((json.len() as u32).to_le_bytes());
        out.extend(json);
        out.extend(payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(SabrError::format(path, "missing SABRCKP1 magic"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        if bytes.len() < 12 + hlen {
            return Err(SabrError::format(path, "truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[12..12 + hlen])
            .map_err(|e| SabrError::format(path, format!("bad header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(SabrError::format(
                path,
                format!(
                    "version {} (reader is {CHECKPOINT_VERSION})",
                    header.version
                ),
            ));
        }
        let payload = &bytes[12 + hlen..];
        let expected: usize = header
            .fields
            .iter()
            .map(|f| f.shape.iter().product::<usize>())
            .sum::<usize>()
            * 4;
        if payload.len() != expected {
            return Err(SabrError::format(
                path,
                format!(
                    "payload is {} bytes, header declares {expected}",
                    payload.len()
                ),
            ));
        }

        let reference = SabrDit::<f32>::new(header.model.clone(), &mut RngStream::new(0))?;
        let names = reference.params().names().to_vec();
        let n = names.len();
        let mut values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let mut sections: Vec<Vec<Tensor<f32>>> = Vec::new();
        for (k, chunk) in header.fields.chunks(n).enumerate() {
            let section = SECTIONS
                .get(k)
                .ok_or_else(|| SabrError::format(path, "too many tensor sections"))?;
            let mut tensors = Vec::with_capacity(n);
            for (f, (name, want)) in chunk
                .iter()
                .zip(names.iter().zip(reference.params().tensors()))
            {
                if f.name != format!("{section}/{name}") || f.shape != want.shape() {
                    return Err(SabrError::Contract(format!(
                        "field {} {:?} does not match the model layout ({section}/{name} {:?})",
                        f.name,
                        f.shape,
                        want.shape()
                    )));
                }
                tensors.push(Tensor::new(
                    &f.shape,
                    values.by_ref().take(want.len()).collect(),
                )?);
            }
            if tensors.len() != n {
                return Err(SabrError::Contract(format!(
                    "section {section} is incomplete"
                )));
            }
            sections.push(tensors);
        }
        let mut it = sections.into_iter();
        let weights = it
            .next()
            .ok_or_else(|| SabrError::format(path, "no weights"))?;
        let ema = it.next();
        let optim = match (it.next(), it.next(), header.adam_step) {
            (Some(m), Some(v), Some(step)) => Some(OptimState { step, m, v }),
            (None, None, None) => None,
            _ => return Err(SabrError::format(path, "incomplete optimizer state")),
        };
        Ok(Checkpoint {
            model: header.model,
            train: header.train,
            step: header.step,
            epoch: header.epoch,
            losses: header.losses,
            manifest_hash: header.manifest_hash,
            names,
            weights,
            ema,
            optim,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| SabrError::io(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| SabrError::io(path, e))
    }

    /// Reads a checkpoint; with `expected`, a different model configuration
    /// is a contract error.
    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| SabrError::io(path, e))?;
        let ck = Self::from_bytes(&bytes, path)?;
        if let Some(cfg) = expected {
            if *cfg != ck.model {
                return Err(SabrError::Contract(format!(
                    "checkpoint model {:?} differs from the requested {:?}",
                    ck.model, cfg
                )));
            }
        }
        Ok(ck)
    }
}
