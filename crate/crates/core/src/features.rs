//! Per-post feature matrices for the regression stage.
//!
//! Columns carry dotted names whose prefix names the block they belong to
//! (`image.3`, `p_visual.sub02`, `stat.hour_sin`), so feature sets can be cut
//! by block without knowing widths.
//!
//! On disk a table is a text header followed by a raw matrix:
//!
//! ```text
//! PFEAT 1 <rows> <cols>\n
//! <tab-separated column names>\n
//! <rows × cols f32, little-endian, row-major>
//! ```
//!
//! with post ids, one per line, in a `<path>.ids` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    ids: Vec<String>,
    columns: Vec<String>,
    values: Vec<f32>,
}

pub fn ids_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

/// Block name of a column: the part before the first dot.
pub fn block_of(column: &str) -> &str {
    column.split_once('.').map_or(column, |(b, _)| b)
}

impl FeatureTable {
    pub fn new(ids: Vec<String>, columns: Vec<String>, values: Vec<f32>) -> Result<Self> {
        if values.len() != ids.len() * columns.len() {
            return Err(Error::invalid(format!(
                "{} values for {} rows of {} columns",
                values.len(),
                ids.len(),
                columns.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature {} for {}",
                columns[i % columns.len()],
                ids[i / columns.len()]
            )));
        }
        if let Some(c) = columns.iter().find(|c| c.contains(['\t', '\n'])) {
            return Err(Error::invalid(format!("column name {c:?} contains a separator")));
        }
        Ok(Self { ids, columns, values })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.width();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Distinct block names in column order.
    pub fn blocks(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in &self.columns {
            let b = block_of(c);
            if out.last() != Some(&b) && !out.contains(&b) {
                out.push(b);
            }
        }
        out
    }

    /// Columns whose name satisfies `keep`, in their original order.
    pub fn select_columns(&self, keep: impl Fn(&str) -> bool) -> Result<Self> {
        let idx: Vec<usize> = (0..self.width()).filter(|&c| keep(&self.columns[c])).collect();
        if idx.is_empty() {
            return Err(Error::invalid("feature selection keeps no columns"));
        }
        let mut values = Vec::with_capacity(idx.len() * self.rows());
        for r in 0..self.rows() {
            let row = self.row(r);
            values.extend(idx.iter().map(|&c| row[c]));
        }
        Ok(Self {
            ids: self.ids.clone(),
            columns: idx.iter().map(|&c| self.columns[c].clone()).collect(),
            values,
        })
    }

    /// Columns belonging to any of `blocks`.
    pub fn select_blocks(&self, blocks: &[&str]) -> Result<Self> {
        for b in blocks {
            if !self.columns.iter().any(|c| block_of(c) == *b) {
                return Err(Error::invalid(format!("feature table has no block {b:?}")));
            }
        }
        self.select_columns(|c| blocks.contains(&block_of(c)))
    }

    /// Rows for `ids`, in that order; repeated ids give repeated rows.
    pub fn select_rows(&self, ids: &[String]) -> Result<Self> {
        let index: std::collections::HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut values = Vec::with_capacity(ids.len() * self.width());
        for id in ids {
            let r = *index
                .get(id.as_str())
                .ok_or_else(|| Error::UnknownId(format!("{id} has no feature row")))?;
            values.extend_from_slice(self.row(r));
        }
        Ok(Self {
            ids: ids.to_vec(),
            columns: self.columns.clone(),
            values,
        })
    }

    /// Rows whose id satisfies `keep`, in their original order.
    pub fn retain_rows(&self, keep: impl Fn(&str) -> bool) -> Self {
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for (r, id) in self.ids.iter().enumerate() {
            if keep(id) {
                ids.push(id.clone());
                values.extend_from_slice(self.row(r));
            }
        }
        Self {
            ids,
            columns: self.columns.clone(),
            values,
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            self.rows(),
            self.width(),
            self.values.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("finite by construction")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!(
            "PFEAT 1 {} {}\n{}\n",
            self.rows(),
            self.width(),
            self.columns.join("\t")
        )
        .into_bytes();
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], ids: Vec<String>) -> Result<Self> {
        let bad = |m: &str| Error::invalid(format!("feature file: {m}"));
        let nl1 = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header"))?;
        let header = std::str::from_utf8(&bytes[..nl1]).map_err(|_| bad("header is not UTF-8"))?;
        let parts: Vec<&str> = header.split(' ').collect();
        if parts.len() != 4 || parts[0] != "PFEAT" {
            return Err(bad("bad magic"));
        }
        if parts[1] != "1" {
            return Err(bad("version mismatch"));
        }
        let rows: usize = parts[2].parse().map_err(|_| bad("bad row count"))?;
        let cols: usize = parts[3].parse().map_err(|_| bad("bad column count"))?;
        let rest = &bytes[nl1 + 1..];
        let nl2 = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing column names"))?;
        let names = std::str::from_utf8(&rest[..nl2]).map_err(|_| bad("column names are not UTF-8"))?;
        let columns: Vec<String> = if cols == 0 {
            Vec::new()
        } else {
            names.split('\t').map(str::to_owned).collect()
        };
        if columns.len() != cols {
            return Err(bad("column count disagrees with header"));
        }
        let data = &rest[nl2 + 1..];
        if data.len() != rows * cols * 4 {
            return Err(bad("matrix size disagrees with header"));
        }
        if ids.len() != rows {
            return Err(bad("id sidecar length disagrees with header"));
        }
        let values = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Self::new(ids, columns, values)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let side = ids_sidecar(path);
        let mut text = self.ids.join("\n");
        text.push('\n');
        fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let side = ids_sidecar(path);
        let ids = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        Self::from_bytes(&bytes, ids.lines().map(str::to_owned).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> FeatureTable {
        FeatureTable::new(
            vec!["a".into(), "b".into()],
            vec!["image.0".into(), "image.1".into(), "stat.hour_sin".into()],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        )
        .unwrap()
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        table().write(&p).unwrap();
        assert_eq!(FeatureTable::read(&p).unwrap(), table());
        assert!(ids_sidecar(&p).exists());
    }

    #[test]
    fn selection() {
        let t = table();
        assert_eq!(t.blocks(), vec!["image", "stat"]);
        let s = t.select_blocks(&["stat"]).unwrap();
        assert_eq!(s.row(1), &[6.0]);
        assert!(t.select_blocks(&["nope"]).is_err());
        let r = t.select_rows(&["b".into(), "b".into()]).unwrap();
        assert_eq!(r.row(0), r.row(1));
        assert!(t.select_rows(&["z".into()]).is_err());
        let kept = t.retain_rows(|id| id == "b");
        assert_eq!((kept.ids(), kept.row(0)), (&["b".to_string()][..], t.row(1)));
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(FeatureTable::new(vec!["a".into()], vec!["x".into()], vec![]).is_err());
        assert!(FeatureTable::new(vec!["a".into()], vec!["x".into()], vec![f32::NAN]).is_err());
        let mut bytes = table().to_bytes();
        bytes.pop();
        assert!(FeatureTable::from_bytes(&bytes, vec!["a".into(), "b".into()]).is_err());
    }
}
