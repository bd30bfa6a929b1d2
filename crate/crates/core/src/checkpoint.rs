//! Versioned binary container of named sections.
//!
//! Layout (little-endian): magic `PPCK`, `u16` version, `u32` section count,
//! then per section `u8` kind, `u16` name length, UTF-8 name, and a payload.
//! Kind 0 is an `f64` matrix (`u32` rows, `u32` cols, values row-major);
//! kind 1 is UTF-8 text (`u32` length, bytes). Section order is preserved, so
//! equal contents always serialize to equal bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PPCK";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    Tensor(Tensor),
    Text(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    sections: Vec<(String, Section)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_tensor(&mut self, name: &str, t: &Tensor) {
        self.sections.push((name.to_owned(), Section::Tensor(t.clone())));
    }

    pub fn put_text(&mut self, name: &str, text: impl Into<String>) {
        self.sections.push((name.to_owned(), Section::Text(text.into())));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    fn find(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| bad(format!("missing section {name:?}")))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        match self.find(name)? {
            Section::Tensor(t) => Ok(t.clone()),
            Section::Text(_) => Err(bad(format!("section {name:?} is not a tensor"))),
        }
    }

    /// Tensor section that must have the given shape.
    pub fn tensor_shaped(&self, name: &str, shape: [usize; 2]) -> Result<Tensor> {
        let t = self.tensor(name)?;
        if t.shape() != shape {
            return Err(bad(format!(
                "section {name:?} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.find(name)? {
            Section::Text(s) => Ok(s),
            Section::Tensor(_) => Err(bad(format!("section {name:?} is not text"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, section) in &self.sections {
            let kind: u8 = match section {
                Section::Tensor(_) => 0,
                Section::Text(_) => 1,
            };
            out.push(kind);
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match section {
                Section::Tensor(t) => {
                    out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
                    out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
                    for v in t.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Section::Text(s) => {
                    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(bad(format!("version mismatch: file {version}, supported {VERSION}")));
        }
        let count = r.u32()? as usize;
        let mut sections = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let kind = r.take(1)?[0];
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| bad("section name is not UTF-8"))?;
            let section = match kind {
                0 => {
                    let rows = r.u32()? as usize;
                    let cols = r.u32()? as usize;
                    let n = rows.checked_mul(cols).ok_or_else(|| bad("tensor too large"))?;
                    let raw = r.take(n.checked_mul(8).ok_or_else(|| bad("tensor too large"))?)?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                        .collect();
                    Section::Tensor(Tensor::new(rows, cols, data).map_err(|e| bad(format!("section {name:?}: {e}")))?)
                }
                1 => {
                    let len = r.u32()? as usize;
                    Section::Text(String::from_utf8(r.take(len)?.to_vec()).map_err(|_| bad("text is not UTF-8"))?)
                }
                other => return Err(bad(format!("unknown section kind {other}"))),
            };
            sections.push((name, section));
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { sections })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad("truncated file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
