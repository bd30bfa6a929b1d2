//! The PEMB embedding interchange format and the [`EmbeddingTable`] built on it.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic    "PEMB"            4 bytes
//! version  u16 = 1
//! kind     u8                0 image global, 1 text global, 2 text tokens
//! dim      u32
//! count    u64
//! count × record:
//!   id_len       u16
//!   id           id_len bytes of UTF-8
//!   token_count  u16         kind 2 only
//!   values       dim × f32   (dim × token_count for kind 2)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use super::{DataError, Result};

pub const MAGIC: &[u8; 4] = b"PEMB";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum PembKind {
    ImageGlobal = 0,
    TextGlobal = 1,
    TextTokens = 2,
}

impl PembKind {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Self::ImageGlobal),
            1 => Ok(Self::TextGlobal),
            2 => Ok(Self::TextTokens),
            other => Err(DataError::Format(format!("unknown kind {other}"))),
        }
    }
}

/// One record: `rows × dim` values (`rows` is 1 except for token files).
#[derive(Debug, Clone, PartialEq)]
pub struct PembEntry {
    pub id: String,
    pub rows: usize,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PembFile {
    pub kind: PembKind,
    pub dim: usize,
    pub entries: Vec<PembEntry>,
}

impl PembFile {
    pub fn new(kind: PembKind, dim: usize) -> Self {
        Self {
            kind,
            dim,
            entries: Vec::new(),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.kind as u8])?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            let id = e.id.as_bytes();
            let id_len = u16::try_from(id.len())
                .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "id longer than 65535 bytes"))?;
            w.write_all(&id_len.to_le_bytes())?;
            w.write_all(id)?;
            if self.kind == PembKind::TextTokens {
                let tokens = u16::try_from(e.rows)
                    .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "more than 65535 tokens"))?;
                w.write_all(&tokens.to_le_bytes())?;
            } else if e.rows != 1 {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidInput,
                    "global embeddings hold exactly one row",
                ));
            }
            if e.values.len() != e.rows * self.dim {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidInput,
                    "record length disagrees with dim",
                ));
            }
            for v in &e.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(DataError::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes(read_array(r)?);
        if version != VERSION {
            return Err(DataError::Format(format!(
                "version mismatch: file has {version}, reader supports {VERSION}"
            )));
        }
        let kind = PembKind::from_u8(read_array::<1>(r)?[0])?;
        let dim = u32::from_le_bytes(read_array(r)?) as usize;
        let count = u64::from_le_bytes(read_array(r)?);
        if dim == 0 && count > 0 {
            return Err(DataError::Format("dim 0 with nonempty records".into()));
        }
        let mut entries = Vec::new();
        for _ in 0..count {
            let id_len = u16::from_le_bytes(read_array(r)?) as usize;
            let mut id = vec![0u8; id_len];
            read_exact(r, &mut id)?;
            let id = String::from_utf8(id).map_err(|_| DataError::Format("id is not UTF-8".into()))?;
            let rows = match kind {
                PembKind::TextTokens => u16::from_le_bytes(read_array(r)?) as usize,
                _ => 1,
            };
            let mut raw = vec![0u8; rows * dim * 4];
            read_exact(r, &mut raw)?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(DataError::Format(format!("non-finite value in record {id:?}")));
            }
            entries.push(PembEntry { id, rows, values });
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(DataError::from_read)? != 0 {
            return Err(DataError::Format("trailing bytes after last record".into()));
        }
        Ok(Self { kind, dim, entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| DataError::Format(e.to_string()))?;
        fs::write(path, buf).map_err(|e| DataError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
        Self::read_from(&mut bytes.as_slice()).map_err(|e| e.in_file(path))
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => DataError::Format("truncated file".into()),
        _ => DataError::from_read(e),
    })
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

/// Per-post embeddings for one text source.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub image: Vec<f32>,
    pub text_global: Vec<f32>,
    /// Row-major `tokens × dim`.
    pub text_tokens: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn token_count(&self, dim: usize) -> usize {
        self.text_tokens.len().checked_div(dim).unwrap_or(0)
    }
}

/// Post id → image vector, text-global vector, and token sequence, all of
/// one dimension.
///
/// A record may carry zero tokens; that marks an empty text field and
/// consumers substitute a padding token.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub records: BTreeMap<String, EmbeddingRecord>,
}

/// Where the three files of an [`EmbeddingTable`] live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingPaths {
    pub image: PathBuf,
    pub text_global: PathBuf,
    pub text_tokens: PathBuf,
}

impl EmbeddingPaths {
    /// Conventional names under `dir` for the given text field stem
    /// (`title` or `tags`).
    pub fn in_dir(dir: &Path, text_stem: &str) -> Self {
        Self {
            image: dir.join("image.pemb"),
            text_global: dir.join(format!("{text_stem}_global.pemb")),
            text_tokens: dir.join(format!("{text_stem}_tokens.pemb")),
        }
    }
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, record: EmbeddingRecord) -> Result<()> {
        let id = id.into();
        let d = self.dim;
        if record.image.len() != d
            || record.text_global.len() != d
            || !record.text_tokens.len().is_multiple_of(d.max(1))
        {
            return Err(DataError::DimMismatch(format!("record {id:?} does not have dim {d}")));
        }
        self.records.insert(id, record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.records.get(id)
    }

    /// Non-fatal observations about the table (currently: empty token sequences).
    pub fn warnings(&self) -> Vec<String> {
        self.records
            .iter()
            .filter(|(_, r)| r.text_tokens.is_empty())
            .map(|(id, _)| format!("{id}: empty token sequence"))
            .collect()
    }

    pub fn to_files(&self) -> [PembFile; 3] {
        let mut image = PembFile::new(PembKind::ImageGlobal, self.dim);
        let mut text = PembFile::new(PembKind::TextGlobal, self.dim);
        let mut tokens = PembFile::new(PembKind::TextTokens, self.dim);
        for (id, r) in &self.records {
            image.entries.push(PembEntry {
                id: id.clone(),
                rows: 1,
                values: r.image.clone(),
            });
            text.entries.push(PembEntry {
                id: id.clone(),
                rows: 1,
                values: r.text_global.clone(),
            });
            tokens.entries.push(PembEntry {
                id: id.clone(),
                rows: r.token_count(self.dim),
                values: r.text_tokens.clone(),
            });
        }
        [image, text, tokens]
    }

    pub fn from_files(image: PembFile, text: PembFile, tokens: PembFile) -> Result<Self> {
        for (f, kind) in [
            (&image, PembKind::ImageGlobal),
            (&text, PembKind::TextGlobal),
            (&tokens, PembKind::TextTokens),
        ] {
            if f.kind != kind {
                return Err(DataError::Format(format!("expected kind {kind:?}, found {:?}", f.kind)));
            }
        }
        let dim = image.dim;
        if text.dim != dim || tokens.dim != dim {
            return Err(DataError::DimMismatch(format!(
                "image dim {dim}, text dim {}, token dim {}",
                text.dim, tokens.dim
            )));
        }
        let mut text_by_id = to_map(text)?;
        let mut tokens_by_id = to_map(tokens)?;
        let mut table = Self::new(dim);
        for e in image.entries {
            if table.records.contains_key(&e.id) {
                return Err(DataError::DuplicateId { id: e.id, line: None });
            }
            let text_global = text_by_id
                .remove(&e.id)
                .ok_or_else(|| DataError::UnknownId(format!("{} has no text embedding", e.id)))?;
            let text_tokens = tokens_by_id
                .remove(&e.id)
                .ok_or_else(|| DataError::UnknownId(format!("{} has no token embeddings", e.id)))?;
            table.records.insert(
                e.id,
                EmbeddingRecord {
                    image: e.values,
                    text_global: text_global.values,
                    text_tokens: text_tokens.values,
                },
            );
        }
        if let Some(id) = text_by_id.keys().chain(tokens_by_id.keys()).next() {
            return Err(DataError::UnknownId(format!("{id} has text but no image embedding")));
        }
        Ok(table)
    }
}

fn to_map(f: PembFile) -> Result<BTreeMap<String, PembEntry>> {
    let mut out = BTreeMap::new();
    for e in f.entries {
        if out.contains_key(&e.id) {
            return Err(DataError::DuplicateId { id: e.id, line: None });
        }
        out.insert(e.id.clone(), e);
    }
    Ok(out)
}

pub fn write_embeddings(paths: &EmbeddingPaths, table: &EmbeddingTable) -> Result<()> {
    let [image, text, tokens] = table.to_files();
    image.write(&paths.image)?;
    text.write(&paths.text_global)?;
    tokens.write(&paths.text_tokens)
}

pub fn read_embeddings(paths: &EmbeddingPaths) -> Result<EmbeddingTable> {
    EmbeddingTable::from_files(
        PembFile::read(&paths.image)?,
        PembFile::read(&paths.text_global)?,
        PembFile::read(&paths.text_tokens)?,
    )
}

/// Named global vectors (prototype rows, class-name tokens) as a kind 0/1 file.
pub fn write_named_rows(path: &Path, kind: PembKind, dim: usize, rows: &[(String, Vec<f32>)]) -> Result<()> {
    let mut f = PembFile::new(kind, dim);
    for (id, values) in rows {
        f.entries.push(PembEntry {
            id: id.clone(),
            rows: 1,
            values: values.clone(),
        });
    }
    f.write(path)
}
