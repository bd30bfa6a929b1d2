//! Deterministic synthetic corpus: posts, frozen-encoder embeddings for titles
//! and tags, and class-name token embeddings.
//!
//! Every class `i` has unit anchors `μ_img[i]` and `μ_txt[i]`. A post's image
//! vector is `normalize(a·μ_img + (1−a)·η)` for a unit noise direction `η` and
//! a per-post alignment `a` centred on the configured `alpha`. Popularity is
//! `class_base + user_weight·user_effect + align_weight·cos(image, μ_img) + ε`
//! with a right-skewed `ε`, so well-aligned posts are more popular.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    write_embeddings, write_manifest, write_named_rows, ClassEntry, ClassTable, DataError, Dataset, EmbeddingPaths,
    EmbeddingRecord, EmbeddingTable, PembKind, PostRecord, Result,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub posts_per_class: usize,
    pub dim: usize,
    pub seed: u64,
    pub alpha: f64,
    pub noise_tokens_frac: f64,
    pub empty_title_frac: f64,
    pub subtopics_per_class: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 8,
            posts_per_class: 250,
            dim: 32,
            seed: 0,
            alpha: 0.7,
            noise_tokens_frac: 0.3,
            empty_title_frac: 0.05,
            subtopics_per_class: 3,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DataError::Config(m.to_owned()));
        if self.classes < 2 {
            return bad("need at least 2 classes");
        }
        if self.dim < 4 {
            return bad("embedding dim must be at least 4");
        }
        if self.posts_per_class == 0 {
            return bad("posts_per_class must be positive");
        }
        if self.subtopics_per_class == 0 {
            return bad("subtopics_per_class must be positive");
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("noise_tokens_frac", self.noise_tokens_frac),
            ("empty_title_frac", self.empty_title_frac),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DataError::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Generator output. Anchors are kept for tests and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub dataset: Dataset,
    pub title: EmbeddingTable,
    pub tags: EmbeddingTable,
    /// Class name → token embedding, in class order.
    pub class_tokens: Vec<(String, Vec<f32>)>,
    pub image_anchors: Vec<Vec<f64>>,
    pub text_anchors: Vec<Vec<f64>>,
}

const VOCAB_PER_CLASS: usize = 12;
const NOISE_VOCAB: usize = 300;
const T0: i64 = 1_420_070_400;
const SPAN: f64 = 63_072_000.0;

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = crate::tensor::l2_norm(&v);
        if n > 1e-8 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn mix(a: f64, signal: &[f64], noise: &[f64]) -> Vec<f64> {
    let v: Vec<f64> = signal.iter().zip(noise).map(|(s, e)| a * s + (1.0 - a) * e).collect();
    crate::tensor::normalize(&v).unwrap_or_else(|_| signal.to_vec())
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

struct Vocab {
    class_words: Vec<Vec<Vec<f64>>>,
    noise_words: Vec<Vec<f64>>,
}

impl Vocab {
    fn embedding(&self, word: &Word) -> &[f64] {
        match *word {
            Word::Class(c, k) => &self.class_words[c][k],
            Word::Noise(k) => &self.noise_words[k],
        }
    }
}

enum Word {
    Class(usize, usize),
    Noise(usize),
}

impl Word {
    fn text(&self) -> String {
        match *self {
            Word::Class(c, k) => format!("c{c}w{k}"),
            Word::Noise(k) => format!("n{k}"),
        }
    }
}

fn draw_words(rng: &mut ChaCha8Rng, class: usize, count: usize, noise_frac: f64) -> Vec<Word> {
    (0..count)
        .map(|_| {
            if rng.random_bool(noise_frac) {
                Word::Noise(rng.random_range(0..NOISE_VOCAB))
            } else {
                Word::Class(class, rng.random_range(0..VOCAB_PER_CLASS))
            }
        })
        .collect()
}

/// Token rows and the global vector for a word sequence; empty text yields
/// no tokens and a zero global vector.
fn encode_words(rng: &mut ChaCha8Rng, vocab: &Vocab, words: &[Word], d: usize, jitter: f64) -> (Vec<f64>, Vec<f64>) {
    let mut tokens = Vec::with_capacity(words.len() * d);
    let mut sum = vec![0.0; d];
    for w in words {
        let base = vocab.embedding(w);
        let noise = unit(rng, d);
        let raw: Vec<f64> = base.iter().zip(&noise).map(|(b, e)| b + jitter * e).collect();
        let tok = crate::tensor::normalize(&raw).unwrap_or_else(|_| base.to_vec());
        for (s, t) in sum.iter_mut().zip(&tok) {
            *s += t;
        }
        tokens.extend(tok);
    }
    let global = if words.is_empty() {
        vec![0.0; d]
    } else {
        crate::tensor::normalize(&sum).unwrap_or(sum)
    };
    (global, tokens)
}

/// Builds the corpus described by `config`. A pure function of the config.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let SynthConfig {
        classes: k,
        posts_per_class,
        dim: d,
        seed,
        alpha,
        noise_tokens_frac,
        empty_title_frac,
        subtopics_per_class,
    } = *config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let image_anchors: Vec<Vec<f64>> = (0..k).map(|_| unit(&mut rng, d)).collect();
    let text_anchors: Vec<Vec<f64>> = (0..k).map(|_| unit(&mut rng, d)).collect();

    let vocab = Vocab {
        class_words: text_anchors
            .iter()
            .map(|mu| {
                (0..VOCAB_PER_CLASS)
                    .map(|_| {
                        let noise = unit(&mut rng, d);
                        mix(alpha, mu, &noise)
                    })
                    .collect()
            })
            .collect(),
        noise_words: (0..NOISE_VOCAB).map(|_| unit(&mut rng, d)).collect(),
    };

    let entries: Vec<ClassEntry> = (0..k)
        .map(|i| {
            let name = format!("sub{i:02}");
            ClassEntry {
                index: i,
                name: name.clone(),
                parent2: name,
                parent1: format!("cat{}", i / 3),
            }
        })
        .collect();
    let class_tokens: Vec<(String, Vec<f32>)> = entries
        .iter()
        .zip(&text_anchors)
        .map(|(e, mu)| {
            let noise = unit(&mut rng, d);
            (e.name.clone(), to_f32(&mix(0.5, mu, &noise)))
        })
        .collect();

    let class_base = Normal::new(5.5, 1.0).expect("valid normal");
    let base: Vec<f64> = (0..k).map(|_| class_base.sample(&mut rng)).collect();
    let n_total = k * posts_per_class;
    let n_users = (n_total / 6).max(4);
    let user_effect: Vec<f64> = (0..n_users).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let user_weight = 0.8;
    let align_weight = 4.0;
    let tail = Exp::new(1.0).expect("valid rate");

    let mut posts = Vec::with_capacity(n_total);
    let mut title = EmbeddingTable::new(d);
    let mut tags = EmbeddingTable::new(d);
    for class in 0..k {
        let skew = 1.0 + (class % 3) as f64;
        for _ in 0..posts_per_class {
            let n = posts.len();
            let post_id = format!("p{n:06}");
            let user = ((rng.random::<f64>().powi(2)) * n_users as f64) as usize;
            let user = user.min(n_users - 1);
            let timestamp = T0 + (SPAN * rng.random::<f64>().powf(skew)) as i64;
            let subtopic = rng.random_range(0..subtopics_per_class);

            let a = (1.0 - (1.0 - alpha) * rng.random_range(0.25..1.75)).clamp(0.0, 1.0);
            let noise = unit(&mut rng, d);
            let image = if a >= 1.0 {
                image_anchors[class].clone()
            } else {
                mix(a, &image_anchors[class], &noise)
            };

            let n_title = if rng.random_bool(empty_title_frac) {
                0
            } else {
                rng.random_range(1..=6)
            };
            let title_words = draw_words(&mut rng, class, n_title, noise_tokens_frac);
            let n_tags = rng.random_range(1..=10);
            let tag_words = draw_words(&mut rng, class, n_tags, (noise_tokens_frac + 0.2).min(1.0));
            let (title_global, title_tokens) = encode_words(&mut rng, &vocab, &title_words, d, 0.15);
            let (tags_global, tags_tokens) = encode_words(&mut rng, &vocab, &tag_words, d, 0.15);

            let cos = crate::tensor::cosine_sim(&image, &image_anchors[class]).unwrap_or(0.0);
            let eps = 0.5 * rng.sample::<f64, _>(StandardNormal) + 0.8 * (tail.sample(&mut rng) - 1.0);
            let popularity = (base[class] + user_weight * user_effect[user] + align_weight * cos + eps).max(0.0);

            let image32 = to_f32(&image);
            title.insert(
                post_id.clone(),
                EmbeddingRecord {
                    image: image32.clone(),
                    text_global: to_f32(&title_global),
                    text_tokens: to_f32(&title_tokens),
                },
            )?;
            tags.insert(
                post_id.clone(),
                EmbeddingRecord {
                    image: image32,
                    text_global: to_f32(&tags_global),
                    text_tokens: to_f32(&tags_tokens),
                },
            )?;
            let e = &entries[class];
            posts.push(PostRecord {
                image_ref: format!("images/{post_id}.jpg"),
                post_id,
                user_id: format!("u{user:05}"),
                title_tokens: title_words.iter().map(Word::text).collect(),
                tag_tokens: tag_words.iter().map(Word::text).collect(),
                category_path: [e.parent1.clone(), e.parent2.clone(), format!("{}_t{subtopic}", e.name)],
                class_index: class,
                timestamp,
                popularity,
            });
        }
    }

    let dataset = Dataset::new(posts, ClassTable::new(entries)?)?;
    Ok(SyntheticCorpus {
        dataset,
        title,
        tags,
        class_tokens,
        image_anchors,
        text_anchors,
    })
}

impl SyntheticCorpus {
    /// Writes the manifest, class table, and embedding files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        write_manifest(&dir.join("manifest.jsonl"), &self.dataset.posts)?;
        self.dataset.classes.write(&dir.join("classes.json"))?;
        write_embeddings(&EmbeddingPaths::in_dir(dir, "title"), &self.title)?;
        let tags = EmbeddingPaths::in_dir(dir, "tags");
        let [_, text, tokens] = self.tags.to_files();
        text.write(&tags.text_global)?;
        tokens.write(&tags.text_tokens)?;
        write_named_rows(
            &dir.join("class_tokens.pemb"),
            PembKind::TextGlobal,
            self.title.dim,
            &self.class_tokens,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::cosine_sim;

    fn small() -> SynthConfig {
        SynthConfig {
            classes: 4,
            posts_per_class: 40,
            dim: 8,
            ..Default::default()
        }
    }

    #[test]
    fn pure_alpha_gives_anchor() {
        let cfg = SynthConfig {
            alpha: 1.0,
            noise_tokens_frac: 0.0,
            ..small()
        };
        let c = generate_synthetic(&cfg).unwrap();
        for p in &c.dataset.posts {
            let img = &c.title.get(&p.post_id).unwrap().image;
            assert_eq!(img, &to_f32(&c.image_anchors[p.class_index]));
        }
    }

    #[test]
    fn deterministic_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic(&small()).unwrap().write(a.path()).unwrap();
        generate_synthetic(&small()).unwrap().write(b.path()).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert_eq!(names.len(), 8);
        for n in names {
            assert_eq!(
                std::fs::read(a.path().join(&n)).unwrap(),
                std::fs::read(b.path().join(&n)).unwrap(),
                "{n:?}"
            );
        }
    }

    #[test]
    fn different_seed_differs() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&SynthConfig { seed: 9, ..small() }).unwrap();
        assert_ne!(a.title, b.title);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig { classes: 1, ..small() },
            SynthConfig { dim: 3, ..small() },
            SynthConfig { alpha: 1.5, ..small() },
            SynthConfig {
                noise_tokens_frac: -0.1,
                ..small()
            },
        ] {
            assert!(matches!(generate_synthetic(&cfg), Err(DataError::Config(_))));
        }
    }

    #[test]
    fn empty_titles_have_no_tokens() {
        let cfg = SynthConfig {
            empty_title_frac: 0.5,
            ..small()
        };
        let c = generate_synthetic(&cfg).unwrap();
        let mut empties = 0;
        for p in &c.dataset.posts {
            let r = c.title.get(&p.post_id).unwrap();
            assert_eq!(r.token_count(8), p.title_tokens.len());
            if p.title_tokens.is_empty() {
                empties += 1;
                assert!(r.text_global.iter().all(|&v| v == 0.0));
            }
            assert!(!p.tag_tokens.is_empty());
        }
        assert!(empties > 0);
    }

    #[test]
    fn nearest_anchor_classification() {
        // K=8, 250/class, α=0.7, d=32
        let c = generate_synthetic(&SynthConfig::default()).unwrap();
        assert_eq!(c.dataset.len(), 2000);
        let correct = c
            .dataset
            .posts
            .iter()
            .filter(|p| {
                let img: Vec<f64> = c
                    .title
                    .get(&p.post_id)
                    .unwrap()
                    .image
                    .iter()
                    .map(|&v| v as f64)
                    .collect();
                let sims: Vec<f64> = c.image_anchors.iter().map(|mu| cosine_sim(&img, mu).unwrap()).collect();
                crate::tensor::argmax(&sims) == Some(p.class_index)
            })
            .count();
        let acc = correct as f64 / 2000.0;
        assert!(acc > 0.9, "accuracy {acc}");
    }

    #[test]
    fn aligned_tokens_closer_to_text_anchor() {
        let cfg = SynthConfig::default();
        let c = generate_synthetic(&cfg).unwrap();
        let (mut aligned, mut noise) = (Vec::new(), Vec::new());
        for p in &c.dataset.posts {
            let r = c.tags.get(&p.post_id).unwrap();
            for (word, row) in p.tag_tokens.iter().zip(r.text_tokens.chunks_exact(cfg.dim)) {
                let row: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                let s = cosine_sim(&row, &c.text_anchors[p.class_index]).unwrap();
                if word.starts_with('c') {
                    aligned.push(s);
                } else {
                    noise.push(s);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&aligned) > mean(&noise) + 0.3,
            "{} vs {}",
            mean(&aligned),
            mean(&noise)
        );
    }
}
