//! Dataset schema, manifest and embedding I/O, the synthetic generator, and
//! hand-crafted user statistics.

mod pemb;
mod records;
mod synth;
mod user_stats;

use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use pemb::{
    read_embeddings, write_embeddings, write_named_rows, EmbeddingPaths, EmbeddingRecord, EmbeddingTable, PembEntry,
    PembFile, PembKind,
};
pub use records::{
    companion_classes_path, load_manifest, write_manifest, ClassEntry, ClassTable, Dataset, ManifestLine, PostRecord,
};
pub use synth::{generate_synthetic, SynthConfig, SyntheticCorpus};
pub use user_stats::{compute_user_stats, UserStats, USER_STAT_NAMES};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate post_id {id:?}{}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    DuplicateId { id: String, line: Option<usize> },
    #[error("unknown category for {post_id:?}{}: {detail}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    UnknownCategory {
        line: Option<usize>,
        post_id: String,
        detail: String,
    },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("unknown id: {0}")]
    UnknownId(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty training split")]
    EmptyTrainSplit,
}

impl DataError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn from_read(e: io::Error) -> Self {
        Self::Format(e.to_string())
    }

    fn in_file(self, path: &Path) -> Self {
        match self {
            Self::Format(m) => Self::Format(format!("{m} ({})", path.display())),
            other => other,
        }
    }
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Train/validation partition of post ids, each list in dataset order.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

/// Seeded shuffle, first `⌈val_frac·n⌉` shuffled posts go to validation.
pub fn split_dataset(dataset: &Dataset, val_frac: f64, seed: u64) -> Result<Split> {
    if !(0.0..1.0).contains(&val_frac) {
        return Err(DataError::Config(format!("val_frac must be in [0, 1), got {val_frac}")));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5B17));
    let n_val = (val_frac * n as f64).ceil() as usize;
    let mut is_val = vec![false; n];
    for &i in &order[..n_val.min(n)] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, p) in dataset.posts.iter().enumerate() {
        if is_val[i] {
            val.push(p.post_id.clone());
        } else {
            train.push(p.post_id.clone());
        }
    }
    Ok(Split { train, val })
}
