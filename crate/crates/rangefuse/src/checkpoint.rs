//! Checkpoint files: an 8-byte little-endian header length, a JSON manifest,
//! then every parameter as little-endian f64 in manifest order.

use std::fs;
use std::path::Path;

use rangefuse_core::nn::{ParamStore, Tensor};
use rangefuse_core::odom::{EstimatorMode, OdomNet};
use serde::{Deserialize, Serialize};

use crate::config::ModelSection;
use crate::error::{Error, Result};

pub const FORMAT: &str = "rangefuse-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Index of the first value, in f64 units from the start of the data.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub mode: String,
    pub seed: u64,
    pub step: u64,
    pub model: ModelSection,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub mode: EstimatorMode,
    pub seed: u64,
    pub net: OdomNet,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut params = Vec::new();
        let mut data = Vec::new();
        for (name, p) in self.net.store.iter() {
            params.push(ParamEntry { name: name.to_string(), shape: p.value.shape().to_vec(), offset: data.len() });
            data.extend_from_slice(p.value.data());
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            mode: self.mode.as_str().into(),
            seed: self.seed,
            step: self.net.store.step,
            model: self.net.config.into(),
            params,
        };
        let header = serde_json::to_vec(&manifest).expect("manifest json");
        let mut out = Vec::with_capacity(8 + header.len() + 8 * data.len());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint { path: path.to_path_buf(), msg };
        if bytes.len() < 8 {
            return Err(bad("file shorter than its header length".into()));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = &bytes[8..];
        if hlen > body.len() {
            return Err(bad(format!("header length {hlen} exceeds file size")));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(format!("manifest: {e}")))?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(bad(format!("unsupported format {} v{}", manifest.format, manifest.version)));
        }
        let raw = &body[hlen..];
        if raw.len() % 8 != 0 {
            return Err(bad("data section is not a whole number of f64 values".into()));
        }
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let mut store = ParamStore::new();
        let mut expected_offset = 0;
        for p in &manifest.params {
            let n: usize = p.shape.iter().product();
            if p.offset != expected_offset || p.offset + n > data.len() {
                return Err(bad(format!("parameter {} has offset {} out of place", p.name, p.offset)));
            }
            let t = Tensor::new(p.shape.clone(), data[p.offset..p.offset + n].to_vec())?;
            store.insert(&p.name, t)?;
            expected_offset += n;
        }
        if expected_offset != data.len() {
            return Err(bad(format!("{} trailing values", data.len() - expected_offset)));
        }
        store.step = manifest.step;
        let mode: EstimatorMode = manifest.mode.parse()?;
        let net = OdomNet::from_store(manifest.model.into(), store).map_err(|e| bad(e.to_string()))?;
        Ok(Self { mode, seed: manifest.seed, net })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::records::write_file(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
