//! Checkpoint container.
//!
//! ```text
//! "EMGCKPT1" | u32 header_len | JSON CheckpointHeader
//! per tensor: u32 name_len | name | u32 ndim | u64 × ndim dims | f32 × prod(dims)
//! ```
//! All integers and floats little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ArchConfig, Model, Param};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EMGCKPT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Init,
    Supervised,
    Distilled,
    Personalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub checkpoint_id: String,
    pub arch: ArchConfig,
    pub seed: u64,
    pub provenance: Provenance,
    /// Checkpoint this one was trained from (teacher for distillation is
    /// recorded separately in the run record).
    pub parent_id: Option<String>,
    /// For personalized checkpoints: how the generic initialization was trained.
    pub init_origin: Option<Provenance>,
    pub num_tensors: usize,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Model,
}

/// Content hash over architecture, provenance and every weight byte.
fn content_id(model: &Model, provenance: Provenance, parent: Option<&str>) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&model.cfg).expect("arch serializes"));
    h.update(model.seed.to_le_bytes());
    h.update(format!("{provenance:?}/{parent:?}").as_bytes());
    for p in &model.params.entries {
        h.update(p.name.as_bytes());
        for v in &p.data {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn new(
        model: Model,
        provenance: Provenance,
        parent_id: Option<String>,
        init_origin: Option<Provenance>,
    ) -> Self {
        let checkpoint_id = content_id(&model, provenance, parent_id.as_deref());
        Checkpoint {
            header: CheckpointHeader {
                checkpoint_id,
                arch: model.cfg.clone(),
                seed: model.seed,
                provenance,
                parent_id,
                init_origin,
                num_tensors: model.params.entries.len(),
            },
            model,
        }
    }

    pub fn id(&self) -> &str {
        &self.header.checkpoint_id
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(12 + json.len() + self.model.params.num_scalars() * 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in &self.model.params.entries {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &d in &p.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned(),
            });
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header_end = 12 + header_len;
        if header_end > bytes.len() {
            return Err(Error::MalformedHeader("header length exceeds file size".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| Error::MalformedHeader(e.to_string()))?;

        let mut cur = Cursor { bytes, pos: header_end };
        let mut params = Vec::with_capacity(header.num_tensors);
        for _ in 0..header.num_tensors {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|e| Error::MalformedHeader(e.to_string()))?;
            let ndim = cur.u32()? as usize;
            let shape = (0..ndim).map(|_| cur.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = cur
                .take(n * 4)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            params.push(Param { name, shape, data });
        }
        if cur.pos != bytes.len() {
            return Err(Error::MalformedHeader("trailing bytes after last tensor".into()));
        }
        let model = Model::from_params(&header.arch, header.seed, params)?;
        Ok(Checkpoint { header, model })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                block: "tensor",
                expected: n,
                found: self.bytes.len() - self.pos,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
