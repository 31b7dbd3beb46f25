//! Feature vectors and the `FVEC` binary feature file.
//!
//! Layout (little-endian): an ASCII header line `FVEC 1 <dim> <count>\n`,
//! then `count` records of `u16` id length, UTF-8 id bytes and `dim`
//! `f32` components.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;

pub const FVEC_VERSION: u32 = 1;
const MAX_HEADER: usize = 128;

/// An image identifier with its visual descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub id: String,
    pub values: Vec<f32>,
}

impl FeatureVector {
    pub fn new(id: impl Into<String>, values: Vec<f32>) -> Self {
        Self {
            id: id.into(),
            values,
        }
    }

    /// Checks the id and component constraints; `dim` is the expected length.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidVector {
                id: String::new(),
                reason: "empty id".into(),
            });
        }
        if self.id.len() > u16::MAX as usize {
            return Err(Error::InvalidVector {
                id: self.id.chars().take(32).collect(),
                reason: format!("id is {} bytes, limit is {}", self.id.len(), u16::MAX),
            });
        }
        if self.values.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: self.values.len(),
            });
        }
        if let Some(pos) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVector {
                id: self.id.clone(),
                reason: format!("component {pos} is not finite"),
            });
        }
        Ok(())
    }

    /// Euclidean distance to `other`, accumulated in `f64`.
    pub fn distance(&self, other: &FeatureVector) -> Result<f64> {
        if self.values.len() != other.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                actual: other.values.len(),
            });
        }
        Ok(crate::index::squared_distance_f32(&self.values, &other.values).sqrt())
    }
}

pub fn encode_fvec(dim: usize, vectors: &[FeatureVector]) -> Result<Vec<u8>> {
    let mut out = format!("FVEC {FVEC_VERSION} {dim} {}\n", vectors.len()).into_bytes();
    out.reserve(vectors.len() * (dim * 4 + 16));
    for v in vectors {
        v.validate(dim)?;
        out.extend_from_slice(&(v.id.len() as u16).to_le_bytes());
        out.extend_from_slice(v.id.as_bytes());
        for x in &v.values {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_fvec(path: impl AsRef<Path>, dim: usize, vectors: &[FeatureVector]) -> Result<()> {
    let bytes = encode_fvec(dim, vectors)?;
    fsutil::write_atomic(path.as_ref(), &bytes)
}

/// Returns `(dim, vectors)`.
pub fn read_fvec(path: impl AsRef<Path>) -> Result<(usize, Vec<FeatureVector>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fvec(&bytes, &fsutil::display(path))
}

pub fn decode_fvec(bytes: &[u8], origin: &str) -> Result<(usize, Vec<FeatureVector>)> {
    let newline = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(origin, "missing FVEC header line"))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| Error::format(origin, "header is not ASCII"))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 4 || fields[0] != "FVEC" {
        return Err(Error::format(origin, format!("bad header `{header}`")));
    }
    let version: u32 = fields[1]
        .parse()
        .map_err(|_| Error::format(origin, format!("bad version `{}`", fields[1])))?;
    if version != FVEC_VERSION {
        return Err(Error::format(
            origin,
            format!("unsupported FVEC version {version} (expected {FVEC_VERSION})"),
        ));
    }
    let dim: usize = fields[2]
        .parse()
        .ok()
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::format(origin, format!("bad dim `{}`", fields[2])))?;
    let count: usize = fields[3]
        .parse()
        .map_err(|_| Error::format(origin, format!("bad count `{}`", fields[3])))?;

    let mut cursor = Cursor {
        bytes,
        pos: newline + 1,
        origin,
    };
    let mut vectors = Vec::with_capacity(count.min(1 << 20));
    for record in 0..count {
        let id_len = u16::from_le_bytes(cursor.take::<2>(record)?) as usize;
        let id_bytes = cursor.take_slice(id_len, record)?;
        let id = std::str::from_utf8(id_bytes)
            .map_err(|_| Error::format(origin, format!("record {record}: id is not UTF-8")))?
            .to_string();
        let raw = cursor.take_slice(dim * 4, record)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let v = FeatureVector { id, values };
        v.validate(dim)
            .map_err(|e| Error::format(origin, format!("record {record}: {e}")))?;
        vectors.push(v);
    }
    if cursor.pos != bytes.len() {
        return Err(Error::format(
            origin,
            format!(
                "{} trailing bytes after {count} records",
                bytes.len() - cursor.pos
            ),
        ));
    }
    Ok((dim, vectors))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Cursor<'a> {
    fn take_slice(&mut self, len: usize, record: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(Error::format(
                self.origin,
                format!("truncated at record {record}"),
            ));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn take<const N: usize>(&mut self, record: usize) -> Result<[u8; N]> {
        let s = self.take_slice(N, record)?;
        Ok(s.try_into().expect("slice length checked"))
    }
}
