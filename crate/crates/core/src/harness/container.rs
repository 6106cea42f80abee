//! Binary float container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "GCAP" | version | rows | cols | rows*cols f32 payload
//! | entry count | { name_len | name bytes | row_offset | rows }*
//! ```
//!
//! Named tensors are contiguous row ranges of the payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GCAP";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexEntry {
    pub name: String,
    pub row_offset: usize,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureContainer {
    cols: usize,
    data: Vec<f32>,
    index: Vec<IndexEntry>,
}

impl FeatureContainer {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            data: Vec::new(),
            index: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.cols).unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn index(&self) -> &[IndexEntry] {
        &self.index
    }

    /// Appends a named `rows × cols` tensor.
    pub fn push(&mut self, name: &str, rows: usize, values: &[f32]) -> Result<()> {
        if self.index.iter().any(|e| e.name == name) {
            return Err(Error::format(format!("duplicate tensor {name:?}")));
        }
        if values.len() != rows * self.cols {
            return Err(Error::format(format!(
                "tensor {name:?}: {} values for {rows} rows of width {}",
                values.len(),
                self.cols
            )));
        }
        if self.cols == 0 && rows > 0 {
            return Err(Error::format(format!(
                "tensor {name:?} has rows but the container has zero width"
            )));
        }
        self.index.push(IndexEntry {
            name: name.to_string(),
            row_offset: self.rows(),
            rows,
        });
        self.data.extend_from_slice(values);
        Ok(())
    }

    pub fn push_rows<R: AsRef<[f32]>>(&mut self, name: &str, rows: &[R]) -> Result<()> {
        let flat: Vec<f32> = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().copied())
            .collect();
        self.push(name, rows.len(), &flat)
    }

    pub fn entry(&self, name: &str) -> Option<&IndexEntry> {
        self.index.iter().find(|e| e.name == name)
    }

    /// Flat values of a named tensor.
    pub fn tensor(&self, name: &str) -> Result<&[f32]> {
        let e = self
            .entry(name)
            .ok_or_else(|| Error::format(format!("container has no tensor {name:?}")))?;
        let start = e.row_offset * self.cols;
        Ok(&self.data[start..start + e.rows * self.cols])
    }

    /// Rows of a named tensor.
    pub fn tensor_rows(&self, name: &str) -> Result<Vec<&[f32]>> {
        let flat = self.tensor(name)?;
        if self.cols == 0 {
            return Ok(Vec::new());
        }
        Ok(flat.chunks(self.cols).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len() + 4);
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.rows() as u32, self.cols as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.index.len() as u32).to_le_bytes());
        for e in &self.index {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.row_offset as u32).to_le_bytes());
            out.extend_from_slice(&(e.rows as u32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::format("bad magic, not a GCAP container"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::format(format!(
                "unsupported container version {version}"
            )));
        }
        let rows = r.u32("row count")? as usize;
        let cols = r.u32("column count")? as usize;
        let payload_len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format("header sizes overflow"))?;
        let available = bytes.len() - HEADER_LEN;
        if available < payload_len {
            let full_rows = if cols == 0 { 0 } else { available / (4 * cols) };
            return Err(Error::format(format!(
                "payload truncated: header declares {rows}x{cols} ({payload_len} bytes) but only {available} bytes follow, data ends inside row {full_rows}"
            )));
        }
        let data: Vec<f32> = r
            .take(payload_len, "payload")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let count = r.u32("index count")? as usize;
        let mut index: Vec<IndexEntry> = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let what = format!("index entry {i}");
            let len = r.u32(&what)? as usize;
            let name = std::str::from_utf8(r.take(len, &what)?)
                .map_err(|_| Error::format(format!("{what}: name is not UTF-8")))?
                .to_string();
            let row_offset = r.u32(&name)? as usize;
            let n = r.u32(&name)? as usize;
            if row_offset + n > rows {
                return Err(Error::format(format!(
                    "tensor {name:?} truncated: rows {row_offset}..{} exceed the {rows}-row payload",
                    row_offset + n
                )));
            }
            if index.iter().any(|e| e.name == name) {
                return Err(Error::format(format!("duplicate tensor {name:?}")));
            }
            if let Some(other) = index.iter().find(|e| {
                n > 0
                    && e.rows > 0
                    && row_offset < e.row_offset + e.rows
                    && e.row_offset < row_offset + n
            }) {
                return Err(Error::format(format!(
                    "tensors {:?} and {name:?} overlap",
                    other.name
                )));
            }
            index.push(IndexEntry {
                name,
                row_offset,
                rows: n,
            });
        }
        if r.at != bytes.len() {
            return Err(Error::format(format!(
                "{} trailing bytes after the index",
                bytes.len() - r.at
            )));
        }
        Ok(Self { cols, data, index })
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| Error::format(format!("{}: {e}", path.display())))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(format!("file truncated while reading {what}")))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
