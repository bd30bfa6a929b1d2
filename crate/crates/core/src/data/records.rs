//! Post records, the class table, and JSONL manifest I/O.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, Result};

/// One social post as it appears in a manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestLine {
    pub post_id: String,
    pub user_id: String,
    pub title: String,
    pub tags: Vec<String>,
    pub category: [String; 3],
    pub class_index: usize,
    pub timestamp: i64,
    pub popularity: f64,
    pub image_ref: String,
}

/// A validated post.
#[derive(Debug, Clone, PartialEq)]
pub struct PostRecord {
    pub post_id: String,
    pub user_id: String,
    pub title_tokens: Vec<String>,
    pub tag_tokens: Vec<String>,
    /// `(level1, level2, level3)`; level 3 is the subtopic.
    pub category_path: [String; 3],
    pub class_index: usize,
    pub timestamp: i64,
    pub popularity: f64,
    pub image_ref: String,
}

impl PostRecord {
    pub fn subtopic(&self) -> &str {
        &self.category_path[2]
    }

    pub fn to_line(&self) -> ManifestLine {
        ManifestLine {
            post_id: self.post_id.clone(),
            user_id: self.user_id.clone(),
            title: self.title_tokens.join(" "),
            tags: self.tag_tokens.clone(),
            category: self.category_path.clone(),
            class_index: self.class_index,
            timestamp: self.timestamp,
            popularity: self.popularity,
            image_ref: self.image_ref.clone(),
        }
    }

    fn from_line(line: ManifestLine) -> Self {
        Self {
            title_tokens: line.title.split_whitespace().map(str::to_owned).collect(),
            post_id: line.post_id,
            user_id: line.user_id,
            tag_tokens: line.tags,
            category_path: line.category,
            class_index: line.class_index,
            timestamp: line.timestamp,
            popularity: line.popularity,
            image_ref: line.image_ref,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub index: usize,
    pub name: String,
    pub parent2: String,
    pub parent1: String,
}

/// Dense class index → names. A post belongs to class `k` when its category
/// path starts with `(parent1, parent2)` of entry `k`; the third level is a
/// subtopic within the class.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassTable {
    entries: Vec<ClassEntry>,
}

impl ClassTable {
    pub fn new(mut entries: Vec<ClassEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.index);
        let mut names = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if e.index != i {
                return Err(DataError::Schema(format!(
                    "class indices must be dense 0..K-1, missing {i}"
                )));
            }
            if !names.insert(e.name.as_str()) {
                return Err(DataError::Schema(format!("duplicate class name {:?}", e.name)));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> Option<&ClassEntry> {
        self.entries.get(index)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.entries[index].name
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    fn accepts(&self, class_index: usize, path: &[String; 3]) -> bool {
        self.entries
            .get(class_index)
            .is_some_and(|e| e.parent1 == path[0] && e.parent2 == path[1])
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let entries: Vec<ClassEntry> =
            serde_json::from_str(&text).map_err(|e| DataError::Schema(format!("{}: {e}", path.display())))?;
        Self::new(entries)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.entries).expect("class table serializes");
        fs::write(path, text + "\n").map_err(|e| DataError::io(path, e))
    }
}

/// Posts plus their class table, with an id index.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub posts: Vec<PostRecord>,
    pub classes: ClassTable,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(posts: Vec<PostRecord>, classes: ClassTable) -> Result<Self> {
        let mut index = HashMap::with_capacity(posts.len());
        for (i, p) in posts.iter().enumerate() {
            if index.insert(p.post_id.clone(), i).is_some() {
                return Err(DataError::DuplicateId {
                    id: p.post_id.clone(),
                    line: None,
                });
            }
            validate_post(p, &classes, None)?;
        }
        Ok(Self { posts, classes, index })
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn get(&self, post_id: &str) -> Option<&PostRecord> {
        self.index.get(post_id).map(|&i| &self.posts[i])
    }

    pub fn position(&self, post_id: &str) -> Option<usize> {
        self.index.get(post_id).copied()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// The posts named by `ids`, in dataset order, with the same class table.
    pub fn subset(&self, ids: &[String]) -> Result<Dataset> {
        let mut keep = vec![false; self.posts.len()];
        for id in ids {
            let i = self.position(id).ok_or_else(|| DataError::UnknownId(id.clone()))?;
            keep[i] = true;
        }
        let posts = self
            .posts
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(p, _)| p.clone())
            .collect();
        Dataset::new(posts, self.classes.clone())
    }

    /// Post indices grouped by class, in dataset order.
    pub fn by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.classes.len()];
        for (i, p) in self.posts.iter().enumerate() {
            groups[p.class_index].push(i);
        }
        groups
    }
}

fn validate_post(p: &PostRecord, classes: &ClassTable, line: Option<usize>) -> Result<()> {
    if !classes.accepts(p.class_index, &p.category_path) {
        return Err(DataError::UnknownCategory {
            line,
            post_id: p.post_id.clone(),
            detail: format!("class {} with path {:?}", p.class_index, p.category_path),
        });
    }
    if p.timestamp <= 0 {
        return Err(DataError::Schema(format!(
            "{}: timestamp must be positive",
            location(line, &p.post_id)
        )));
    }
    if !p.popularity.is_finite() {
        return Err(DataError::Schema(format!(
            "{}: popularity must be finite",
            location(line, &p.post_id)
        )));
    }
    Ok(())
}

fn location(line: Option<usize>, id: &str) -> String {
    match line {
        Some(l) => format!("line {l} ({id})"),
        None => id.to_owned(),
    }
}

/// The `classes.json` that sits next to a manifest.
pub fn companion_classes_path(manifest: &Path) -> PathBuf {
    manifest.with_file_name("classes.json")
}

/// Reads a JSONL manifest. The class table comes from `classes` if given,
/// else from `classes.json` next to the manifest, else it is derived from the
/// records themselves.
pub fn load_manifest(path: &Path, classes: Option<&Path>) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut lines = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
            line: lineno,
            message: e.to_string(),
        })?;
        lines.push((lineno, PostRecord::from_line(parsed)));
    }

    let companion = companion_classes_path(path);
    let table = match classes {
        Some(p) => ClassTable::read(p)?,
        None if companion.exists() => ClassTable::read(&companion)?,
        None => derive_classes(&lines)?,
    };

    let mut seen = HashSet::new();
    for (lineno, p) in &lines {
        if !seen.insert(p.post_id.as_str()) {
            return Err(DataError::DuplicateId {
                id: p.post_id.clone(),
                line: Some(*lineno),
            });
        }
        validate_post(p, &table, Some(*lineno))?;
    }
    Dataset::new(lines.into_iter().map(|(_, p)| p).collect(), table)
}

fn derive_classes(lines: &[(usize, PostRecord)]) -> Result<ClassTable> {
    let mut found: BTreeMap<usize, (usize, &PostRecord)> = BTreeMap::new();
    for (lineno, p) in lines {
        match found.get(&p.class_index) {
            Some((_, q)) if q.category_path[..2] != p.category_path[..2] => {
                return Err(DataError::UnknownCategory {
                    line: Some(*lineno),
                    post_id: p.post_id.clone(),
                    detail: format!(
                        "class {} already seen with path {:?}",
                        p.class_index,
                        &q.category_path[..2]
                    ),
                });
            }
            Some(_) => {}
            None => {
                found.insert(p.class_index, (*lineno, p));
            }
        }
    }
    let entries = found
        .into_iter()
        .map(|(index, (_, p))| ClassEntry {
            index,
            name: p.category_path[1].clone(),
            parent2: p.category_path[1].clone(),
            parent1: p.category_path[0].clone(),
        })
        .collect();
    ClassTable::new(entries)
}

/// Writes `manifest.jsonl`-style output, one record per line.
pub fn write_manifest(path: &Path, posts: &[PostRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in posts {
        let line = serde_json::to_string(&p.to_line()).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}
