//! Checkpoint layout:
//!
//! ```text
//! b"DKCKPT\r\n"              8-byte magic
//! u32 LE                    header length in bytes
//! header                    UTF-8 JSON: format version, network config,
//!                           parameter names and shapes
//! f64 LE * total            parameters, in header order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use super::model::{Model, Param};
use crate::error::{bail, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DKCKPT\r\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: NetworkConfig,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        params: model
            .params
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + header.len() + 8 * model.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for p in &model.params {
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        bail!(Format, "not a checkpoint (bad magic)");
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let Some(header) = bytes.get(12..12 + hlen) else {
        bail!(Format, "truncated checkpoint header");
    };
    let header: Header = serde_json::from_slice(header)?;
    if header.format_version != FORMAT_VERSION {
        bail!(Format, "unsupported checkpoint version {}", header.format_version);
    }
    let mut blob = &bytes[12 + hlen..];
    let mut params = Vec::with_capacity(header.params.len());
    for entry in header.params {
        let n: usize = entry.shape.iter().product();
        if blob.len() < 8 * n {
            bail!(Format, "checkpoint blob truncated at {}", entry.name);
        }
        let data = blob[..8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        blob = &blob[8 * n..];
        params.push(Param {
            name: entry.name,
            tensor: Tensor::new(entry.shape, data)?,
        });
    }
    if !blob.is_empty() {
        bail!(Format, "{} trailing bytes after parameters", blob.len());
    }
    Model::from_params(header.config, params)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    from_bytes(&fs::read(path)?)
}
