//! `KGSR` binary container for parameter matrices.
//!
//! Two layouts share the magic and are told apart by the version word:
//!
//! ```text
//! v1 (single matrix):  "KGSR" u32:1 u32:rows u32:dim  f32[rows*dim]
//! v2 (sectioned):      "KGSR" u32:2 u32:n
//!                      n × { u16:name_len  name  u32:rows  u32:cols }
//!                      f32 payload of every section, in table order
//! ```
//!
//! All integers and floats are little-endian; matrices are row-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"KGSR";
pub const MATRIX_VERSION: u32 = 1;
pub const SECTIONED_VERSION: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Section {
    pub fn from_f64(name: impl Into<String>, rows: usize, cols: usize, data: impl IntoIterator<Item = f64>) -> Self {
        let data: Vec<f32> = data.into_iter().map(|v| v as f32).collect();
        debug_assert_eq!(data.len(), rows * cols);
        Section {
            name: name.into(),
            rows,
            cols,
            data,
        }
    }
}

pub fn encode_matrix(rows: usize, dim: usize, data: &[f32]) -> Result<Vec<u8>> {
    if data.len() != rows * dim {
        return Err(Error::ShapeMismatch(format!("{} floats for {rows}x{dim}", data.len())));
    }
    let mut out = Vec::with_capacity(16 + data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let mut r = Reader::new(bytes);
    r.header(MATRIX_VERSION)?;
    let rows = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let data = r.f32s(rows * dim)?;
    r.finish()?;
    Ok((rows, dim, data))
}

pub fn encode_sections(sections: &[Section]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&SECTIONED_VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for s in sections {
        if s.data.len() != s.rows * s.cols {
            return Err(Error::ShapeMismatch(format!("section `{}`", s.name)));
        }
        let name = s.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(s.rows as u32).to_le_bytes());
        out.extend_from_slice(&(s.cols as u32).to_le_bytes());
    }
    for s in sections {
        for v in &s.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_sections(bytes: &[u8]) -> Result<Vec<Section>> {
    let mut r = Reader::new(bytes);
    r.header(SECTIONED_VERSION)?;
    let n = r.u32()? as usize;
    let mut table = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::CorruptSnapshot("section name is not UTF-8".into()))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        table.push((name, rows, cols));
    }
    let mut sections = Vec::with_capacity(table.len());
    for (name, rows, cols) in table {
        let data = r.f32s(rows * cols)?;
        sections.push(Section { name, rows, cols, data });
    }
    r.finish()?;
    Ok(sections)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Bounds-checked little-endian cursor shared by the snapshot decoders.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptSnapshot(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn header(&mut self, version: u32) -> Result<()> {
        self.magic(MAGIC)?;
        let v = self.u32()?;
        if v != version {
            return Err(Error::CorruptSnapshot(format!("unsupported version {v} (expected {version})")));
        }
        Ok(())
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::CorruptSnapshot("bad magic".into()));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::CorruptSnapshot("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::CorruptSnapshot(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}
