//! Frozen-encoder abstraction.
//!
//! The alignment model never runs a neural encoder. It asks an
//! [`EncoderProvider`] for image vectors, text vectors (global plus per-token),
//! and class-name token embeddings. [`TableEncoder`] answers from embedding
//! tables, either produced by the synthetic generator or read from PEMB files
//! written by an offline exporter.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{read_embeddings, EmbeddingPaths, EmbeddingTable, PembFile, PembKind, SyntheticCorpus};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which text field of a post to encode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TextSource {
    #[default]
    Title,
    #[serde(rename = "alltags")]
    AllTags,
}

impl TextSource {
    pub fn file_stem(self) -> &'static str {
        match self {
            Self::Title => "title",
            Self::AllTags => "tags",
        }
    }
}

impl FromStr for TextSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "title" => Ok(Self::Title),
            "alltags" | "all_tags" | "tags" => Ok(Self::AllTags),
            other => Err(Error::invalid(format!("unknown text source {other:?}"))),
        }
    }
}

/// Global embedding `h` and token sequence `H` (`l × d`, `l ≥ 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoding {
    pub global: Vec<f64>,
    pub tokens: Tensor,
    /// The text was empty and a padding token stands in for it.
    pub padded: bool,
}

pub trait EncoderProvider: Sync {
    /// Width of image and text embeddings.
    fn dim(&self) -> usize;

    /// Width of prompt token embeddings.
    fn token_dim(&self) -> usize;

    fn encode_image(&self, post_id: &str) -> Result<Vec<f64>>;

    fn encode_text(&self, post_id: &str, source: TextSource) -> Result<TextEncoding>;

    fn embed_class_token(&self, class_name: &str) -> Result<Vec<f64>>;

    /// Fixed `token_dim × dim` map from pooled prompt tokens to the text
    /// embedding space.
    fn prompt_projection(&self) -> &Tensor;
}

/// Table-backed provider.
#[derive(Debug, Clone)]
pub struct TableEncoder {
    dim: usize,
    title: EmbeddingTable,
    tags: Option<EmbeddingTable>,
    class_tokens: BTreeMap<String, Vec<f32>>,
    projection: Tensor,
    pad: Vec<f64>,
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

impl TableEncoder {
    pub fn new(
        title: EmbeddingTable,
        tags: Option<EmbeddingTable>,
        class_tokens: BTreeMap<String, Vec<f32>>,
    ) -> Result<Self> {
        let dim = title.dim;
        if let Some(t) = &tags {
            if t.dim != dim {
                return Err(Error::invalid(format!(
                    "tag embeddings have dim {}, titles {dim}",
                    t.dim
                )));
            }
        }
        if let Some((name, _)) = class_tokens.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::invalid(format!("class token {name:?} does not have dim {dim}")));
        }
        let pad = vec![1.0 / (dim as f64).sqrt(); dim];
        Ok(Self {
            dim,
            title,
            tags,
            class_tokens,
            projection: Tensor::identity(dim),
            pad,
        })
    }

    pub fn from_synthetic(corpus: &SyntheticCorpus) -> Result<Self> {
        Self::new(
            corpus.title.clone(),
            Some(corpus.tags.clone()),
            corpus.class_tokens.iter().cloned().collect(),
        )
    }

    /// Reads `image.pemb`, `title_{global,tokens}.pemb`, `class_tokens.pemb`,
    /// and, when present, `tags_{global,tokens}.pemb` from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let title = read_embeddings(&EmbeddingPaths::in_dir(dir, "title"))?;
        let tag_paths = EmbeddingPaths::in_dir(dir, "tags");
        let tags = if tag_paths.text_global.exists() {
            let image = PembFile::read(&tag_paths.image)?;
            let text = PembFile::read(&tag_paths.text_global)?;
            let tokens = PembFile::read(&tag_paths.text_tokens)?;
            Some(EmbeddingTable::from_files(image, text, tokens)?)
        } else {
            None
        };
        let classes = PembFile::read(&dir.join("class_tokens.pemb"))?;
        if classes.kind != PembKind::TextGlobal {
            return Err(Error::invalid("class_tokens.pemb must hold text-global vectors"));
        }
        let class_tokens = classes.entries.into_iter().map(|e| (e.id, e.values)).collect();
        Self::new(title, tags, class_tokens)
    }

    pub fn pad_token(&self) -> &[f64] {
        &self.pad
    }

    fn table(&self, source: TextSource) -> Result<&EmbeddingTable> {
        match source {
            TextSource::Title => Ok(&self.title),
            TextSource::AllTags => self
                .tags
                .as_ref()
                .ok_or_else(|| Error::invalid("no tag embeddings loaded")),
        }
    }
}

impl EncoderProvider for TableEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn token_dim(&self) -> usize {
        self.dim
    }

    fn encode_image(&self, post_id: &str) -> Result<Vec<f64>> {
        self.title
            .get(post_id)
            .map(|r| widen(&r.image))
            .ok_or_else(|| Error::UnknownId(post_id.to_owned()))
    }

    fn encode_text(&self, post_id: &str, source: TextSource) -> Result<TextEncoding> {
        let rec = self
            .table(source)?
            .get(post_id)
            .ok_or_else(|| Error::UnknownId(post_id.to_owned()))?;
        let l = rec.token_count(self.dim);
        if l == 0 {
            if source == TextSource::AllTags {
                return Err(Error::EmptyText(post_id.to_owned()));
            }
            return Ok(TextEncoding {
                global: self.pad.clone(),
                tokens: Tensor::new(1, self.dim, self.pad.clone())?,
                padded: true,
            });
        }
        Ok(TextEncoding {
            global: widen(&rec.text_global),
            tokens: Tensor::new(l, self.dim, widen(&rec.text_tokens))?,
            padded: false,
        })
    }

    fn embed_class_token(&self, class_name: &str) -> Result<Vec<f64>> {
        self.class_tokens
            .get(class_name)
            .map(|v| widen(v))
            .ok_or_else(|| Error::UnknownId(format!("class token {class_name}")))
    }

    fn prompt_projection(&self) -> &Tensor {
        &self.projection
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};

    fn corpus() -> SyntheticCorpus {
        generate_synthetic(&SynthConfig {
            classes: 3,
            posts_per_class: 30,
            dim: 6,
            empty_title_frac: 0.3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn synthetic_alpha_one_gives_anchor() {
        let c = generate_synthetic(&SynthConfig {
            classes: 3,
            posts_per_class: 5,
            dim: 6,
            alpha: 1.0,
            noise_tokens_frac: 0.0,
            ..Default::default()
        })
        .unwrap();
        let enc = TableEncoder::from_synthetic(&c).unwrap();
        for p in &c.dataset.posts {
            let v = enc.encode_image(&p.post_id).unwrap();
            let anchor: Vec<f64> = c.image_anchors[p.class_index]
                .iter()
                .map(|&x| x as f32 as f64)
                .collect();
            assert_eq!(v, anchor);
        }
    }

    #[test]
    fn file_backend_is_bit_exact() {
        let c = corpus();
        let dir = tempfile::tempdir().unwrap();
        c.write(dir.path()).unwrap();
        let from_file = TableEncoder::from_dir(dir.path()).unwrap();
        let direct = TableEncoder::from_synthetic(&c).unwrap();
        for p in &c.dataset.posts {
            let id = &p.post_id;
            assert_eq!(from_file.encode_image(id).unwrap(), direct.encode_image(id).unwrap());
            for src in [TextSource::Title, TextSource::AllTags] {
                assert_eq!(
                    from_file.encode_text(id, src).unwrap(),
                    direct.encode_text(id, src).unwrap()
                );
            }
        }
        assert_eq!(
            from_file.embed_class_token("sub01").unwrap(),
            direct.embed_class_token("sub01").unwrap()
        );
    }

    #[test]
    fn repeated_calls_identical() {
        let c = corpus();
        let enc = TableEncoder::from_synthetic(&c).unwrap();
        let id = &c.dataset.posts[7].post_id;
        assert_eq!(enc.encode_image(id).unwrap(), enc.encode_image(id).unwrap());
        assert_eq!(
            enc.encode_text(id, TextSource::Title).unwrap(),
            enc.encode_text(id, TextSource::Title).unwrap()
        );
    }

    #[test]
    fn empty_title_is_padded() {
        let c = corpus();
        let enc = TableEncoder::from_synthetic(&c).unwrap();
        let empty = c.dataset.posts.iter().find(|p| p.title_tokens.is_empty()).unwrap();
        let t = enc.encode_text(&empty.post_id, TextSource::Title).unwrap();
        assert!(t.padded);
        assert_eq!(t.tokens.rows(), 1);
        assert_eq!(t.global, enc.pad_token());
        let single = c.dataset.posts.iter().find(|p| p.title_tokens.len() == 1).unwrap();
        let t = enc.encode_text(&single.post_id, TextSource::Title).unwrap();
        assert!(!t.padded);
        assert_eq!(t.tokens.shape(), [1, 6]);
    }

    #[test]
    fn empty_tags_are_an_error() {
        let mut c = corpus();
        let id = c.dataset.posts[0].post_id.clone();
        c.tags.records.get_mut(&id).unwrap().text_tokens.clear();
        let enc = TableEncoder::from_synthetic(&c).unwrap();
        assert!(matches!(
            enc.encode_text(&id, TextSource::AllTags),
            Err(Error::EmptyText(_))
        ));
    }

    #[test]
    fn unknown_ids() {
        let enc = TableEncoder::from_synthetic(&corpus()).unwrap();
        assert!(matches!(enc.encode_image("nope"), Err(Error::UnknownId(_))));
        assert!(matches!(
            enc.encode_text("nope", TextSource::Title),
            Err(Error::UnknownId(_))
        ));
        assert!(matches!(enc.embed_class_token("nope"), Err(Error::UnknownId(_))));
    }

    #[test]
    fn every_output_has_declared_width() {
        let c = corpus();
        let enc = TableEncoder::from_synthetic(&c).unwrap();
        for p in &c.dataset.posts {
            assert_eq!(enc.encode_image(&p.post_id).unwrap().len(), enc.dim());
            let t = enc.encode_text(&p.post_id, TextSource::AllTags).unwrap();
            assert_eq!(t.global.len(), enc.dim());
            assert_eq!(t.tokens.cols(), enc.dim());
        }
        assert_eq!(enc.prompt_projection().shape(), [enc.token_dim(), enc.dim()]);
    }

    #[test]
    fn parse_source() {
        assert_eq!("title".parse::<TextSource>().unwrap(), TextSource::Title);
        assert_eq!("AllTags".parse::<TextSource>().unwrap(), TextSource::AllTags);
        assert!("body".parse::<TextSource>().is_err());
    }
}
