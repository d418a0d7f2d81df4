//! Binary container shared by datasets and model checkpoints.
//!
//! ```text
//! header (16 bytes): magic "HEMNETBC" | version u32 LE | kind u32 LE
//! count  u64 LE
//! entry* : tag u8
//!          0x01 matrix: rows u64 | cols u64 | rows*cols f64 LE
//!          0x02 labels: len u64  | len u32 LE
//! ```
//! Trailing bytes after the last entry are rejected.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MAGIC: [u8; 8] = *b"HEMNETBC";
pub const FORMAT_VERSION: u32 = 1;

const TAG_MATRIX: u8 = 0x01;
const TAG_LABELS: u8 = 0x02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum ContainerKind {
    Dataset = 1,
    Checkpoint = 2,
}

impl ContainerKind {
    fn from_u32(v: u32) -> Result<Self> {
        match v {
            1 => Ok(ContainerKind::Dataset),
            2 => Ok(ContainerKind::Checkpoint),
            other => Err(Error::Format(format!("unknown container kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Matrix(Matrix),
    Labels(Vec<u32>),
}

pub fn encode(kind: ContainerKind, entries: &[Entry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(kind as u32).to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for entry in entries {
        match entry {
            Entry::Matrix(m) => {
                out.push(TAG_MATRIX);
                out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
                out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
                for v in m.as_slice() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Entry::Labels(labels) => {
                out.push(TAG_LABELS);
                out.extend_from_slice(&(labels.len() as u64).to_le_bytes());
                for v in labels {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, elem_size: usize, what: &str) -> Result<usize> {
        let n = self.u64(what)?;
        let remaining = (self.bytes.len() - self.pos) as u64;
        if n.checked_mul(elem_size as u64).is_none_or(|b| b > remaining) {
            return Err(Error::Format(format!("{what} claims {n} elements but only {remaining} bytes remain")));
        }
        Ok(n as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ContainerKind, Vec<Entry>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let kind = ContainerKind::from_u32(r.u32("kind")?)?;
    let count = r.len(1, "entry count")?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        match r.u8("entry tag")? {
            TAG_MATRIX => {
                let rows = r.u64("matrix rows")?;
                let cols = r.u64("matrix cols")?;
                let n = rows
                    .checked_mul(cols)
                    .filter(|n| n.checked_mul(8).is_some_and(|b| b <= (bytes.len() - r.pos) as u64))
                    .ok_or_else(|| Error::Format(format!("matrix {rows}x{cols} exceeds remaining data")))?;
                let raw = r.take(n as usize * 8, "matrix data")?;
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                entries.push(Entry::Matrix(Matrix::new(rows as usize, cols as usize, data)?));
            }
            TAG_LABELS => {
                let n = r.len(4, "label count")?;
                let raw = r.take(n * 4, "labels")?;
                entries.push(Entry::Labels(
                    raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect(),
                ));
            }
            tag => return Err(Error::Format(format!("unknown entry tag {tag:#04x}"))),
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((kind, entries))
}

pub fn write_container(path: impl AsRef<Path>, kind: ContainerKind, entries: &[Entry]) -> Result<()> {
    fs::write(path, encode(kind, entries))?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<(ContainerKind, Vec<Entry>)> {
    decode(&fs::read(path)?)
}
