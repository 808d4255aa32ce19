//! Checkpoint container.
//!
//! Layout: the 8-byte magic `LDIFFCK\0`, a little-endian `u32` version, a
//! `u64` header length, a JSON header, then every tensor as little-endian
//! `f32` in header order. EMA tensors are stored under the `ema/` prefix.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::config::ModelConfig;
use crate::backbone::params::param_specs;
use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LDIFFCK\0";
pub const VERSION: u32 = 1;
pub const EMA_PREFIX: &str = "ema/";

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    step: u64,
    tensors: Vec<Entry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Optimizer steps taken.
    pub step: u64,
    pub params: ParamStore<f32>,
    pub ema: Option<ParamStore<f32>>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::new();
        let mut payload = Vec::new();
        let stores = std::iter::once(("", &self.params)).chain(self.ema.iter().map(|e| (EMA_PREFIX, e)));
        for (prefix, store) in stores {
            for (name, t) in store.iter() {
                entries.push(Entry {
                    name: format!("{prefix}{name}"),
                    shape: t.shape().to_vec(),
                    offset: payload.len(),
                });
                for v in t.data() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let header = Header {
            version: VERSION,
            config: self.config.clone(),
            step: self.step,
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Serde(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..).unwrap_or_default();
        let json = body.get(..hlen).ok_or_else(|| bad("truncated header"))?;
        let payload = &body[hlen..];
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::Serde(e.to_string()))?;
        header.config.validate()?;
        let mut params = ParamStore::new();
        let mut ema = ParamStore::new();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let raw = payload
                .get(e.offset..e.offset + 4 * n)
                .ok_or_else(|| bad(format!("tensor {} runs past end of file", e.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(&e.shape, data)?;
            match e.name.strip_prefix(EMA_PREFIX) {
                Some(name) => ema.insert(name, t)?,
                None => params.insert(&e.name, t)?,
            }
        }
        let expected = param_specs(&header.config);
        let matches = |s: &ParamStore<f32>| {
            s.len() == expected.len()
                && expected
                    .iter()
                    .zip(s.iter())
                    .all(|(spec, (name, t))| spec.name == name && spec.shape == t.shape())
        };
        if !matches(&params) {
            return Err(bad("parameters do not match the stored config"));
        }
        let ema = if ema.is_empty() {
            None
        } else if matches(&ema) {
            Some(ema)
        } else {
            return Err(bad("EMA parameters do not match the stored config"));
        };
        Ok(Self {
            config: header.config,
            step: header.step,
            params,
            ema,
        })
    }

    /// Writes to a temporary sibling and renames, so a crash never leaves a
    /// half-written checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Parameters used for sampling: EMA when present.
    pub fn sampling_params(&self) -> &ParamStore<f32> {
        self.ema.as_ref().unwrap_or(&self.params)
    }
}

/// Hex SHA-256 of a byte string.
pub fn fingerprint(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::params::init_params;
    use crate::numerics::rng::RngStream;

    fn sample() -> Checkpoint {
        let config = ModelConfig {
            d: 8,
            n_triplets: 1,
            ..ModelConfig::toy()
        };
        let mut rng = RngStream::new(9);
        let params = init_params(&config, &mut rng);
        let ema = Some(init_params(&config, &mut rng));
        Checkpoint {
            config,
            step: 17,
            params,
            ema,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.step, 17);
        assert_eq!(back.config, ck.config);
        assert_eq!(back.params.tensors(), ck.params.tensors());
        assert_eq!(back.ema.unwrap().tensors(), ck.ema.unwrap().tensors());
        assert_eq!(back.params.names(), ck.params.names());
        assert_eq!(fingerprint(&bytes).len(), 64);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong).is_err());
        let mut wrong = bytes;
        wrong[8] = 9;
        assert!(Checkpoint::from_bytes(&wrong).is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.params.tensors(), ck.params.tensors());
    }
}
