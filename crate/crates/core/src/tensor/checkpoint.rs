//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"HGTCKPT\0"            8-byte magic
//! u32 version             currently 1
//! u64 header_len
//! header                  UTF-8 JSON: dtype, metadata, params [{name, shape, decay}],
//!                         optimizer {config, step} or null
//! values                  every parameter's raw values in header order
//! m, v                    optimizer moments in the same order (only if optimizer present)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{AdamW, AdamWConfig};
use super::params::ParamStore;
use super::Scalar;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HGTCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    decay: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimEntry {
    config: AdamWConfig,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    metadata: serde_json::Value,
    params: Vec<ParamEntry>,
    optimizer: Option<OptimEntry>,
}

/// Parameters, optional optimizer state and free-form metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub metadata: serde_json::Value,
    pub params: ParamStore<T>,
    pub optimizer: Option<AdamW<T>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            dtype: T::DTYPE.to_string(),
            metadata: self.metadata.clone(),
            params: self
                .params
                .ids()
                .map(|id| ParamEntry {
                    name: self.params.name(id).to_string(),
                    shape: self.params.shape(id).to_vec(),
                    decay: self.params.decays(id),
                })
                .collect(),
            optimizer: self.optimizer.as_ref().map(|o| OptimEntry { config: o.config, step: o.step }),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(json.len() + 20 + self.params.numel() * T::BYTES * 3);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for id in self.params.ids() {
            self.params.value(id).iter().for_each(|v| v.write_le(&mut out));
        }
        if let Some(o) = &self.optimizer {
            for buf in o.m.iter().chain(&o.v) {
                buf.iter().for_each(|v| v.write_le(&mut out));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(fmt(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| fmt("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| fmt(&e.to_string()))?;
        if header.dtype != T::DTYPE {
            return Err(fmt(&format!("dtype {} does not match {}", header.dtype, T::DTYPE)));
        }
        let mut pos = 20 + hlen;
        let mut read = |n: usize| -> Result<Vec<T>> {
            let end = pos + n * T::BYTES;
            let chunk = bytes.get(pos..end).ok_or_else(|| fmt("truncated values"))?;
            pos = end;
            Ok(chunk.chunks_exact(T::BYTES).map(T::read_le).collect())
        };
        let mut params = ParamStore::new();
        for p in &header.params {
            let n = p.shape.iter().product();
            params.add(p.name.clone(), &p.shape, read(n)?, p.decay);
        }
        let optimizer = match header.optimizer {
            None => None,
            Some(o) => {
                let sizes: Vec<usize> = params.ids().map(|id| params.value(id).len()).collect();
                let m = sizes.iter().map(|&n| read(n)).collect::<Result<Vec<_>>>()?;
                let v = sizes.iter().map(|&n| read(n)).collect::<Result<Vec<_>>>()?;
                Some(AdamW { config: o.config, step: o.step, m, v })
            }
        };
        if pos != bytes.len() {
            return Err(fmt("trailing bytes"));
        }
        Ok(Self { metadata: header.metadata, params, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Grads;

    #[test]
    fn round_trip_with_optimizer() {
        let mut params = ParamStore::<f32>::new();
        params.add("a", &[2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-7, 9.0], true);
        params.add("b", &[3], vec![0.25, 0.5, 0.75], false);
        let mut opt = AdamW::new(&params, AdamWConfig::default());
        let mut g = Grads::zeros_like(&params);
        g.values[0][1] = 0.3;
        opt.step(&mut params, &g, 0.01).unwrap();
        let ck = Checkpoint { metadata: serde_json::json!({"k": 1}), params, optimizer: Some(opt) };
        let back = Checkpoint::<f32>::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.params, ck.params);
        assert_eq!(back.optimizer, ck.optimizer);
        assert_eq!(back.metadata, ck.metadata);
        assert!(Checkpoint::<f64>::from_bytes(&ck.to_bytes()).is_err());
    }
}
