//! `.bflw` files: the magic `BFLW1\n`, a little-endian `u64` manifest
//! length, a JSON manifest, then every tensor as little-endian `f64`s in
//! directory order.

use std::path::Path;

use butterflow::flow::{ParamKind, ParamTable, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 6] = b"BFLW1\n";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Option<RunConfig>,
    pub iteration: u64,
    pub tensors: ParamTable,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: Option<RunConfig>,
    iteration: u64,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    kind: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
    count: u64,
}

fn corrupt(msg: impl Into<String>) -> CliError {
    CliError::CorruptCheckpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let entries = self
            .tensors
            .tensors
            .iter()
            .map(|t| {
                let e = Entry {
                    name: t.name.clone(),
                    kind: t.kind.as_str().to_string(),
                    shape: t.shape.clone(),
                    offset,
                    count: t.numel() as u64,
                };
                offset += 8 * t.numel() as u64;
                e
            })
            .collect();
        let manifest = serde_json::to_vec(&Manifest {
            config: self.config.clone(),
            iteration: self.iteration,
            tensors: entries,
        })
        .expect("manifest serialises");
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + manifest.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in &self.tensors.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| corrupt("bad magic"))?;
        if rest.len() < 8 {
            return Err(corrupt("truncated manifest length"));
        }
        let (len, rest) = rest.split_at(8);
        let len = u64::from_le_bytes(len.try_into().expect("8 bytes"));
        if len > rest.len() as u64 {
            return Err(corrupt(format!("manifest of {len} bytes exceeds the file")));
        }
        let (manifest, payload) = rest.split_at(len as usize);
        let manifest: Manifest =
            serde_json::from_slice(manifest).map_err(|e| corrupt(format!("manifest: {e}")))?;
        let mut expected = 0u64;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            let numel: usize = e.shape.iter().product();
            if e.count != numel as u64 {
                return Err(corrupt(format!("tensor '{}': count {} for shape {:?}", e.name, e.count, e.shape)));
            }
            if e.offset != expected {
                return Err(corrupt(format!("tensor '{}': offset {} expected {expected}", e.name, e.offset)));
            }
            let end = expected + 8 * e.count;
            if end > payload.len() as u64 {
                return Err(corrupt(format!("tensor '{}' runs past the payload", e.name)));
            }
            let data = payload[expected as usize..end as usize]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let kind = ParamKind::parse(&e.kind).map_err(|err| corrupt(format!("tensor '{}': {err}", e.name)))?;
            tensors.push(Tensor {
                name: e.name,
                shape: e.shape,
                kind,
                data,
            });
            expected = end;
        }
        if expected != payload.len() as u64 {
            return Err(corrupt(format!(
                "payload has {} bytes, directory covers {expected}",
                payload.len()
            )));
        }
        Ok(Self {
            config: manifest.config,
            iteration: manifest.iteration,
            tensors: ParamTable { tensors },
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
