//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (config, step, RNG state, tensor directory with byte offsets) and
//! then the tensor payloads as little-endian `f32`, in directory order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::heads::{HeadConfig, TaskHead};
use super::params::{parameter_manifest, EncoderParams, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MLMCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Adam moment estimates, one tensor per parameter in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<Tensor<f32>>,
    pub second_moment: Vec<Tensor<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub head: Option<HeadConfig>,
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub step: u64,
    pub rng_state: Vec<u8>,
    pub optimizer: Option<OptimizerState>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    head: Option<HeadConfig>,
    step: u64,
    rng_state: String,
    optimizer_step: Option<u64>,
    metadata: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
    optimizer_tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn new(
        config: &ModelConfig,
        params: &EncoderParams<f32>,
        head: Option<&TaskHead<f32>>,
        step: u64,
    ) -> Self {
        let mut tensors: Vec<(String, Tensor<f32>)> = params
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        if let Some(h) = head {
            tensors.extend(h.tensors().into_iter().map(|(n, t)| (n, t.clone())));
        }
        Checkpoint {
            config: config.clone(),
            head: head.map(TaskHead::config),
            tensors,
            step,
            rng_state: Vec::new(),
            optimizer: None,
            metadata: BTreeMap::new(),
        }
    }

    /// Expected `(name, shape)` list for this checkpoint's config and head.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let mut m = parameter_manifest(&self.config);
        if let Some(h) = &self.head {
            m.extend(TaskHead::<f32>::head_manifest(h, self.config.hidden_size));
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let manifest = self.manifest();
        let actual: Vec<(String, Vec<usize>)> = self
            .tensors
            .iter()
            .map(|(n, t)| (n.clone(), t.shape.clone()))
            .collect();
        if actual != manifest {
            let missing = manifest.iter().find(|m| !actual.contains(m));
            let extra = actual.iter().find(|a| !manifest.contains(a));
            return Err(Error::Checkpoint(format!(
                "tensor directory does not match config (missing {:?}, unexpected {:?})",
                missing.map(|m| &m.0),
                extra.map(|e| &e.0)
            )));
        }
        for (name, t) in &self.tensors {
            if t.data.len() != t.shape.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!("tensor {name} has a short payload")));
            }
        }
        if let Some(opt) = &self.optimizer {
            let n = self.tensors.len();
            if opt.first_moment.len() != n || opt.second_moment.len() != n {
                return Err(Error::Checkpoint(
                    "optimizer state does not cover every tensor".into(),
                ));
            }
            for ((name, t), (m, v)) in self
                .tensors
                .iter()
                .zip(opt.first_moment.iter().zip(&opt.second_moment))
            {
                if m.shape != t.shape || v.shape != t.shape {
                    return Err(Error::Checkpoint(format!(
                        "optimizer moments for {name} have the wrong shape"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn encoder_params(&self) -> Result<EncoderParams<f32>> {
        let n = parameter_manifest(&self.config).len();
        if self.tensors.len() < n {
            return Err(Error::Checkpoint("checkpoint has too few tensors".into()));
        }
        EncoderParams::from_named(&self.config, self.tensors[..n].to_vec())
    }

    pub fn task_head(&self) -> Result<Option<TaskHead<f32>>> {
        let Some(cfg) = &self.head else {
            return Ok(None);
        };
        let n = parameter_manifest(&self.config).len();
        TaskHead::from_named(cfg, self.config.hidden_size, self.tensors[n..].to_vec()).map(Some)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut offset = 0u64;
        let mut dir = |tensors: &mut dyn Iterator<Item = (&str, &Tensor<f32>)>| {
            tensors
                .map(|(name, t)| {
                    let e = TensorEntry {
                        name: name.to_string(),
                        shape: t.shape.clone(),
                        offset,
                    };
                    offset += 4 * t.data.len() as u64;
                    e
                })
                .collect::<Vec<_>>()
        };
        let tensors = dir(&mut self.tensors.iter().map(|(n, t)| (n.as_str(), t)));
        let optimizer_tensors = match &self.optimizer {
            Some(opt) => {
                let names: Vec<String> = self
                    .tensors
                    .iter()
                    .map(|(n, _)| format!("exp_avg.{n}"))
                    .chain(self.tensors.iter().map(|(n, _)| format!("exp_avg_sq.{n}")))
                    .collect();
                let all: Vec<&Tensor<f32>> = opt.first_moment.iter().chain(&opt.second_moment).collect();
                dir(&mut names.iter().map(String::as_str).zip(all))
            }
            None => Vec::new(),
        };
        let header = Header {
            config: self.config.clone(),
            head: self.head.clone(),
            step: self.step,
            rng_state: hex_encode(&self.rng_state),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            metadata: self.metadata.clone(),
            tensors,
            optimizer_tensors,
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let payloads = self.tensors.iter().map(|(_, t)| t).chain(
            self.optimizer
                .iter()
                .flat_map(|o| o.first_moment.iter().chain(&o.second_moment)),
        );
        for t in payloads {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..body])?;
        let data = &bytes[body..];
        let read = |e: &TensorEntry| -> Result<Tensor<f32>> {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 4 * n;
            if end > data.len() {
                return Err(Error::Checkpoint(format!("payload of {} is truncated", e.name)));
            }
            let data = data[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(Tensor {
                shape: e.shape.clone(),
                data,
            })
        };
        let tensors = header
            .tensors
            .iter()
            .map(|e| Ok((e.name.clone(), read(e)?)))
            .collect::<Result<Vec<_>>>()?;
        let optimizer = match header.optimizer_step {
            Some(step) => {
                let all = header
                    .optimizer_tensors
                    .iter()
                    .map(read)
                    .collect::<Result<Vec<_>>>()?;
                if all.len() != 2 * tensors.len() {
                    return Err(bad("optimizer directory does not match tensor directory"));
                }
                let mut first_moment = all;
                let second_moment = first_moment.split_off(tensors.len());
                Some(OptimizerState {
                    step,
                    first_moment,
                    second_moment,
                })
            }
            None => None,
        };
        let ckpt = Checkpoint {
            config: header.config,
            head: header.head,
            tensors,
            step: header.step,
            rng_state: hex_decode(&header.rng_state).ok_or_else(|| bad("rng_state is not hex"))?,
            optimizer,
            metadata: header.metadata,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Writes via a temporary file and rename, so a crash never leaves a
    /// half-written checkpoint under the final name.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hex_decode(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).ok())
        .collect()
}
