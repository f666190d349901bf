//! Checkpoint directories: `manifest.json` plus raw little-endian `f32`
//! data in `weights.bin`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::Network;
use crate::error::{Error, Result};
use crate::ndiff::DiffArray;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayDescriptor {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: usize,
    /// Number of `f32` values.
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub arrays: Vec<ArrayDescriptor>,
}

/// Named arrays of a network together with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub arrays: Vec<(String, DiffArray<f32>)>,
}

impl Checkpoint {
    pub fn from_network(net: &Network<f32>) -> Self {
        Checkpoint {
            config: net.config().clone(),
            arrays: net
                .arrays()
                .iter()
                .map(|a| {
                    let mut array = a.array.clone();
                    array.set_requires_grad(false);
                    (a.name.clone(), array)
                })
                .collect(),
        }
    }

    pub fn to_network(&self) -> Result<Network<f32>> {
        Network::from_arrays(&self.config, self.arrays.clone())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut weights = Vec::new();
        let mut arrays = Vec::with_capacity(self.arrays.len());
        for (name, a) in &self.arrays {
            arrays.push(ArrayDescriptor {
                name: name.clone(),
                shape: a.shape().to_vec(),
                byte_offset: weights.len(),
                length: a.numel(),
            });
            for v in a.data() {
                weights.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            arrays,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("serializable") + "\n";
        let mpath = dir.join("manifest.json");
        fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
        let wpath = dir.join("weights.bin");
        fs::write(&wpath, weights).map_err(|e| Error::io(&wpath, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.json");
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let wpath = dir.join("weights.bin");
        let bytes = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
        let expected: usize = manifest.arrays.iter().map(|a| 4 * a.length).sum();
        if bytes.len() != expected {
            return Err(Error::Checkpoint(format!(
                "{} holds {} bytes, manifest describes {expected}",
                wpath.display(),
                bytes.len()
            )));
        }
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        let mut offset = 0;
        for d in &manifest.arrays {
            if d.byte_offset != offset || d.shape.iter().product::<usize>() != d.length {
                return Err(Error::Checkpoint(format!(
                    "descriptor of `{}` is inconsistent (offset {}, length {}, shape {:?})",
                    d.name, d.byte_offset, d.length, d.shape
                )));
            }
            let data = bytes[offset..offset + 4 * d.length]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            offset += 4 * d.length;
            arrays.push((d.name.clone(), DiffArray::new(&d.shape, data)?));
        }
        let ckpt = Checkpoint {
            config: manifest.config,
            arrays,
        };
        // shape agreement with the architecture
        ckpt.to_network()?;
        Ok(ckpt)
    }
}
