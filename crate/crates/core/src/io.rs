//! File formats.
//!
//! Structured data (grids, well configurations, metadata) is JSON. Large numeric
//! fields use a small binary container:
//!
//! ```text
//! magic    8 bytes  "CO2ARRAY"
//! version  u32 LE   1
//! dtype    u8       0 = f64
//! ndim     u8
//! shape    ndim x u64 LE
//! payload  prod(shape) x f64 LE
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CoreError, Result};

const MAGIC: &[u8; 8] = b"CO2ARRAY";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

/// An n-dimensional f64 array in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(CoreError::Shape { what: "Array", expected: n, got: data.len() });
        }
        Ok(Self { shape, data })
    }

    /// Packs equally long rows into a 2-D array.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(CoreError::Shape { what: "Array::from_rows", expected: cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    /// Splits a 2-D array back into rows.
    pub fn to_rows(&self) -> Result<Vec<Vec<f64>>> {
        if self.shape.len() != 2 {
            return Err(CoreError::Shape { what: "Array::to_rows", expected: 2, got: self.shape.len() });
        }
        let cols = self.shape[1];
        if cols == 0 {
            return Ok(vec![Vec::new(); self.shape[0]]);
        }
        Ok(self.data.chunks(cols).map(<[f64]>::to_vec).collect())
    }
}

pub fn encode_array<W: Write>(mut w: W, a: &Array) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[DTYPE_F64, a.shape.len() as u8])?;
    for &d in &a.shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(a.data.len() * 8);
    for v in &a.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn decode_array(bytes: &[u8]) -> std::result::Result<Array, String> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| "truncated header".to_string())?;
    if &magic != MAGIC {
        return Err("bad magic".into());
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b).map_err(|_| "truncated header".to_string())?;
    let version = u32::from_le_bytes(u32b);
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head).map_err(|_| "truncated header".to_string())?;
    if head[0] != DTYPE_F64 {
        return Err(format!("unsupported dtype code {}", head[0]));
    }
    let mut shape = Vec::with_capacity(head[1] as usize);
    let mut u64b = [0u8; 8];
    for _ in 0..head[1] {
        r.read_exact(&mut u64b).map_err(|_| "truncated shape".to_string())?;
        shape.push(u64::from_le_bytes(u64b) as usize);
    }
    let n: usize = shape.iter().product();
    if r.len() != n * 8 {
        return Err(format!("payload has {} bytes, shape {shape:?} needs {}", r.len(), n * 8));
    }
    let data = r.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(Array { shape, data })
}

pub fn write_array(path: &Path, a: &Array) -> Result<()> {
    let mut buf = Vec::new();
    encode_array(&mut buf, a).expect("writing to a Vec cannot fail");
    write_atomic(path, &buf)
}

pub fn read_array(path: &Path) -> Result<Array> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(format!("reading {}", path.display()), e))?;
    decode_array(&bytes).map_err(|reason| CoreError::format(path, reason))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CoreError::format(path, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| CoreError::format(path, e.to_string()))
}

/// Writes via a temporary sibling and a rename so readers never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| CoreError::io(format!("creating {}", parent.display()), e))?;
        }
    }
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    fs::write(&tmp, bytes).map_err(|e| CoreError::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| CoreError::io(format!("renaming to {}", path.display()), e))
}
