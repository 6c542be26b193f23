//! Named tensor container file format, shared by checkpoints and DT caches.
//!
//! Layout: magic `MTLT`, format version u16, entry count u32; per entry:
//! name length u16 + UTF-8 name, rank u8, dims as u32 each, element type
//! tag u8 (0 = f32, 1 = f64), raw little-endian element payload.
//! Round-trips bit-exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Element;

pub const MAGIC: [u8; 4] = *b"MTLT";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ElemData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ElemData {
    pub fn len(&self) -> usize {
        match self {
            ElemData::F32(v) => v.len(),
            ElemData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_f32(&self) -> Vec<f32> {
        match self {
            ElemData::F32(v) => v.clone(),
            ElemData::F64(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn as_f64(&self) -> Vec<f64> {
        match self {
            ElemData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ElemData::F64(v) => v.clone(),
        }
    }

    fn tag(&self) -> u8 {
        match self {
            ElemData::F32(_) => f32::TAG,
            ElemData::F64(_) => f64::TAG,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ElemData,
}

impl Entry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: ElemData) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dim(format!(
                "tensor map entry: shape {:?} implies {} elements, payload has {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Entry {
            name: name.into(),
            shape,
            data,
        })
    }
}

pub fn write_to_vec(entries: &[Entry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(e.shape.len() as u8);
        for &d in &e.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(e.data.tag());
        match &e.data {
            ElemData::F32(v) => {
                for &x in v {
                    x.write_le(&mut out);
                }
            }
            ElemData::F64(v) => {
                for &x in v {
                    x.write_le(&mut out);
                }
            }
        }
    }
    out
}

/// Parse a tensor map from bytes. `label` names the source in errors
/// (usually a file path).
pub fn read_from_slice(bytes: &[u8], label: &str) -> Result<Vec<Entry>> {
    let mut cur = Cursor {
        bytes,
        pos: 0,
        label,
    };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: label.to_string(),
            expected: MAGIC,
        });
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::BadVersion {
            path: label.to_string(),
            found: version,
            expected: VERSION,
        });
    }
    let count = u32::from_le_bytes(cur.take(4, "entry count")?.try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let hdr = format!("entry {i} header");
        let name_len =
            u16::from_le_bytes(cur.take(2, &hdr)?.try_into().unwrap()) as usize;
        let name_bytes = cur.take(name_len, &hdr)?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::InvalidInput(format!("{label}: entry {i} name is not UTF-8")))?
            .to_string();
        let rank = cur.take(1, &name)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(cur.take(4, &name)?.try_into().unwrap()) as usize);
        }
        let tag = cur.take(1, &name)?[0];
        let n: usize = shape.iter().product();
        let data = match tag {
            t if t == f32::TAG => {
                let raw = cur.take(n * f32::BYTE_WIDTH, &name)?;
                ElemData::F32(raw.chunks_exact(4).map(f32::read_le).collect())
            }
            t if t == f64::TAG => {
                let raw = cur.take(n * f64::BYTE_WIDTH, &name)?;
                ElemData::F64(raw.chunks_exact(8).map(f64::read_le).collect())
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "{label}: entry {name:?} has unknown element type tag {other}"
                )))
            }
        };
        entries.push(Entry { name, shape, data });
    }
    Ok(entries)
}

pub fn write_file(path: &Path, entries: &[Entry]) -> Result<()> {
    fs::write(path, write_to_vec(entries)).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<Entry>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_from_slice(&bytes, &path.display().to_string())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    label: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, entry: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.label.to_string(),
                entry: entry.to_string(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}
