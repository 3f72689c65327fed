//! Versioned parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "DIFFCKPT"
//! version  u32      CHECKPOINT_VERSION
//! hlen     u64      byte length of the JSON header
//! header   hlen     {"dtype":"f64","tensors":[{"name","shape"}...],"metadata":{...}}
//! payload           f64 values of every tensor, in header order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DiffError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DIFFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    tensors: Vec<Entry>,
    metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

pub fn write_checkpoint<W: Write>(mut w: W, store: &ParamStore, metadata: &serde_json::Value) -> Result<()> {
    let header = Header {
        dtype: "f64".into(),
        tensors: store.iter().map(|(_, n, t)| Entry { name: n.to_string(), shape: t.shape().to_vec() }).collect(),
        metadata: metadata.clone(),
    };
    let hbytes = serde_json::to_vec(&header).map_err(|e| DiffError::Format(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(hbytes.len() as u64).to_le_bytes())?;
    w.write_all(&hbytes)?;
    for (_, _, t) in store.iter() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ParamStore, serde_json::Value)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(DiffError::Format("not a checkpoint file (bad magic)".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(DiffError::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let hlen = u64::from_le_bytes(u64buf) as usize;
    let mut hbytes = vec![0u8; hlen];
    r.read_exact(&mut hbytes)?;
    let header: Header = serde_json::from_slice(&hbytes).map_err(|e| DiffError::Format(e.to_string()))?;
    if header.dtype != "f64" {
        return Err(DiffError::Format(format!("unsupported dtype {}", header.dtype)));
    }
    let mut store = ParamStore::new();
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        store.add(e.name, Tensor::new(e.shape, data)?);
    }
    Ok((store, header.metadata))
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, metadata: &serde_json::Value) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), store, metadata)
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
