//! `SANC` checkpoint container.
//!
//! ```text
//! "SANC" | u8 version = 1 | u64 LE manifest length | manifest JSON | blob
//! ```
//!
//! The manifest lists every parameter's name, shape, byte offset into the
//! blob and element count, plus a free-form architecture record. The blob is
//! little-endian f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Parameter, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SANC";
const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub count: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    architecture: serde_json::Value,
    params: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub architecture: serde_json::Value,
    pub params: ParamStore,
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    let mut entries = Vec::with_capacity(ckpt.params.len());
    let mut offset = 0u64;
    for p in ckpt.params.iter() {
        let count = p.value.len() as u64;
        entries.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset,
            count,
        });
        offset += count * 8;
    }
    let manifest = serde_json::to_vec(&Manifest {
        architecture: ckpt.architecture.clone(),
        params: entries,
    })?;
    let io = |e| Error::io("<checkpoint>", e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&[VERSION]).map_err(io)?;
    w.write_all(&(manifest.len() as u64).to_le_bytes())
        .map_err(io)?;
    w.write_all(&manifest).map_err(io)?;
    for p in ckpt.params.iter() {
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut head = [0u8; 13];
    r.read_exact(&mut head)
        .map_err(|_| Error::Format("checkpoint truncated in header".into()))?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    if head[4] != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            head[4]
        )));
    }
    let len = u64::from_le_bytes(head[5..13].try_into().expect("8 bytes")) as usize;
    let mut manifest = vec![0u8; len];
    r.read_exact(&mut manifest)
        .map_err(|_| Error::Format("checkpoint truncated in manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(&manifest)
        .map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)
        .map_err(|e| Error::io("<checkpoint>", e))?;

    let mut params = ParamStore::new();
    for e in manifest.params {
        let n: usize = e.shape.iter().product();
        if n as u64 != e.count {
            return Err(Error::Format(format!(
                "{}: shape {:?} disagrees with count {}",
                e.name, e.shape, e.count
            )));
        }
        let start = e.offset as usize;
        let end = start + n * 8;
        if end > blob.len() {
            return Err(Error::Format(format!(
                "{}: blob range out of bounds",
                e.name
            )));
        }
        let data = blob[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(Parameter::new(e.name, Tensor::new(e.shape, data)?))?;
    }
    Ok(Checkpoint {
        architecture: manifest.architecture,
        params,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(f), ckpt)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}
