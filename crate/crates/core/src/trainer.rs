//! Alignment training, per-sample losses, loss-ranked selection, and feature
//! extraction.
//!
//! The training objective for one post is `L_G + L_O + L_c`. A minibatch
//! gradient is the mean of per-sample gradients; samples are processed in
//! fixed-size chunks, one graph per chunk, and chunk gradients are summed in
//! chunk order so the result does not depend on the thread count.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::checkpoint::Checkpoint;
use crate::data::{ClassTable, Dataset, UserStats, USER_STAT_NAMES};
use crate::encoder::{EncoderProvider, TextEncoding, TextSource};
use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::fusion::{
    self, record_cross_loss, record_fuse, record_modality_logits, FusedTriple, FusionParams, FusionVars,
};
use crate::optim::{AdamWConfig, AdamWState};
use crate::prompt::{self, ClassEmbeds, PromptBank, PromptVars};
use crate::prototypes::PrototypeSet;
use crate::tensor::{self, Tensor};

/// Samples per gradient graph.
const CHUNK: usize = 16;
const INIT_SALT: u64 = 0x1A17_0000_0000_0001;
const SHUFFLE_SALT: u64 = 0x5A0F_F1E5_0000_0002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of lowest-loss training posts kept by selection.
    pub selection_ratio: f64,
    /// Temperature of the two prompt losses.
    pub tau_g: f64,
    /// Sharpness of the local soft maximum over tokens.
    pub tau_s: f64,
    pub tau_v: f64,
    pub tau_t: f64,
    pub learn_temperatures: bool,
    /// Fusion width `d`.
    pub dim: usize,
    pub heads: usize,
    pub prompt_len: usize,
    pub context_std: f64,
    pub text_source: TextSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-5,
            epochs: 4,
            batch_size: 128,
            seed: 0,
            selection_ratio: 0.77,
            tau_g: 0.07,
            tau_s: 0.1,
            tau_v: 0.07,
            tau_t: 0.07,
            learn_temperatures: false,
            dim: 64,
            heads: 4,
            prompt_len: 8,
            context_std: 0.02,
            text_source: TextSource::Title,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau_g", self.tau_g),
            ("tau_s", self.tau_s),
            ("tau_v", self.tau_v),
            ("tau_t", self.tau_t),
            ("context_std", self.context_std),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
        if !(self.selection_ratio > 0.0 && self.selection_ratio <= 1.0) {
            return Err(Error::invalid(format!(
                "selection_ratio must lie in (0, 1], got {}",
                self.selection_ratio
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("lr and weight_decay must be finite and nonnegative"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.prompt_len == 0 || self.dim == 0 {
            return Err(Error::invalid(
                "epochs, batch_size, prompt_len and dim must be at least 1",
            ));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// Encoder outputs for one post.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Vec<f64>,
    /// `image` scaled to unit norm; this is what the model sees.
    pub unit_image: Vec<f64>,
    pub text: TextEncoding,
    pub label: usize,
}

/// Encodes the posts named by `ids`, in that order.
pub fn load_samples(
    dataset: &Dataset,
    ids: &[String],
    encoder: &dyn EncoderProvider,
    source: TextSource,
) -> Result<Vec<Sample>> {
    ids.par_iter()
        .map(|id| {
            let post = dataset
                .get(id)
                .ok_or_else(|| Error::UnknownId(format!("{id} not in dataset")))?;
            let image = encoder.encode_image(id)?;
            let unit_image = tensor::normalize(&image)?;
            Ok(Sample {
                id: id.clone(),
                image,
                unit_image,
                text: encoder.encode_text(id, source)?,
                label: post.class_index,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub global: f64,
    pub local: f64,
    pub cross: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.global + self.local + self.cross
    }
}

/// Everything the model computes for one post.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutputs {
    pub p: Vec<f64>,
    pub p_local: Vec<f64>,
    pub fused: FusedTriple,
    pub p_visual: Vec<f64>,
    pub p_text: Vec<f64>,
    pub losses: LossParts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentModel {
    pub config: TrainConfig,
    pub class_names: Vec<String>,
    pub bank: PromptBank,
    pub fusion: FusionParams,
    visual_prototypes: Tensor,
    textual_prototypes: Tensor,
}

struct Recorded {
    prompt: PromptVars,
    class_global: Var,
    class_local: Var,
    fusion: FusionVars,
    visual: Var,
    textual: Var,
}

/// Per-epoch and per-batch mean training loss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub batch_losses: Vec<f64>,
}

impl AlignmentModel {
    /// Fresh parameters seeded from `config.seed`.
    pub fn init(
        config: &TrainConfig,
        encoder: &dyn EncoderProvider,
        classes: &ClassTable,
        prototypes: &PrototypeSet,
    ) -> Result<Self> {
        config.validate()?;
        let k = classes.len();
        let d_enc = encoder.dim();
        for (name, t) in [("visual", &prototypes.visual), ("textual", &prototypes.textual)] {
            if t.shape() != [k, d_enc] {
                return Err(Error::invalid(format!(
                    "{name} prototypes have shape {:?}, expected [{k}, {d_enc}]",
                    t.shape()
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ INIT_SALT);
        let bank = PromptBank::init(encoder, classes, config.prompt_len, config.context_std, &mut rng)?;
        let fusion = FusionParams::init(d_enc, config.dim, config.heads, config.tau_v, config.tau_t, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            class_names: classes.entries().iter().map(|e| e.name.clone()).collect(),
            bank,
            fusion,
            visual_prototypes: prototypes.visual.clone(),
            textual_prototypes: prototypes.textual.clone(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn input_dim(&self) -> usize {
        self.fusion.input_dim()
    }

    pub fn visual_prototypes(&self) -> &Tensor {
        &self.visual_prototypes
    }

    pub fn textual_prototypes(&self) -> &Tensor {
        &self.textual_prototypes
    }

    /// Feature width produced by [`extract_features`].
    pub fn feature_width(&self) -> usize {
        let (d_enc, k) = (self.input_dim(), self.num_classes());
        d_enc + d_enc + k + k + self.fusion.dim() + k + k + USER_STAT_NAMES.len()
    }

    /// Trained tensors, in optimizer order.
    pub fn trainable(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.bank.global_ctx, &self.bank.local_ctx];
        let mut f = self.fusion.tensors();
        if !self.config.learn_temperatures {
            f.truncate(f.len() - 2);
        }
        out.extend(f);
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let learn = self.config.learn_temperatures;
        let mut out = vec![&mut self.bank.global_ctx, &mut self.bank.local_ctx];
        let mut f = self.fusion.tensors_mut();
        if !learn {
            f.truncate(f.len() - 2);
        }
        out.extend(f);
        out
    }

    fn record(&self, g: &mut Graph, projection: &Tensor) -> Result<Recorded> {
        let prompt = self.bank.record(g, true);
        let proj = g.constant(projection.clone());
        let (class_global, class_local) = prompt::record_class_embeddings(g, prompt, proj)?;
        Ok(Recorded {
            prompt,
            class_global,
            class_local,
            fusion: self.fusion.record(g, true, self.config.learn_temperatures),
            visual: g.constant(self.visual_prototypes.clone()),
            textual: g.constant(self.textual_prototypes.clone()),
        })
    }

    fn trainable_vars(&self, r: &Recorded) -> Vec<Var> {
        let mut out = vec![r.prompt.global_ctx, r.prompt.local_ctx];
        let mut f = r.fusion.vars();
        if !self.config.learn_temperatures {
            f.truncate(f.len() - 2);
        }
        out.extend(f);
        out
    }

    fn record_sample(&self, g: &mut Graph, r: &Recorded, s: &Sample) -> Result<Var> {
        let c = &self.config;
        let x = g.constant(Tensor::row(&s.unit_image)?);
        let h = g.constant(Tensor::row(&s.text.global)?);
        let toks = g.constant(s.text.tokens.clone());
        let p = prompt::record_global_score(g, h, r.class_global)?;
        let pl = prompt::record_local_score(g, toks, r.class_local, c.tau_s)?;
        let (lg, lo) = prompt::record_prompt_losses(g, p, pl, s.label, c.tau_g)?;
        let fused = record_fuse(g, x, r.visual, r.textual, &r.fusion)?;
        let (zv, zt) = record_modality_logits(g, fused, &r.fusion)?;
        let lc = record_cross_loss(g, zv, zt, s.label)?;
        let sum = g.add(lg, lo)?;
        Ok(g.add(sum, lc)?)
    }

    /// Summed loss over `samples` and its gradient for each [`trainable`](Self::trainable) tensor.
    pub fn loss_gradients(&self, samples: &[&Sample], encoder: &dyn EncoderProvider) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let r = self.record(&mut g, encoder.prompt_projection())?;
        let mut total: Option<Var> = None;
        for s in samples {
            let l = self.record_sample(&mut g, &r, s)?;
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
        let total = total.ok_or_else(|| Error::invalid("no samples"))?;
        let grads = g.backward(total)?;
        let out = self.trainable_vars(&r).into_iter().map(|v| grads.wrt(&g, v)).collect();
        Ok((g.value(total).get(0, 0), out))
    }

    pub fn class_embeds(&self, encoder: &dyn EncoderProvider) -> Result<ClassEmbeds> {
        prompt::class_embeddings(&self.bank, encoder)
    }

    /// Forward pass for one sample without recording gradients.
    pub fn evaluate(&self, s: &Sample, embeds: &ClassEmbeds) -> Result<SampleOutputs> {
        let c = &self.config;
        if s.label >= self.num_classes() {
            return Err(Error::invalid(format!("{}: label {} out of range", s.id, s.label)));
        }
        let p = prompt::global_score(&s.text.global, embeds)?;
        let p_local = prompt::local_score(&s.text.tokens, embeds, c.tau_s)?;
        let (global, local) = prompt::prompt_losses(&p, &p_local, s.label, c.tau_g)?;
        let fused = fusion::fuse(
            &s.unit_image,
            &self.visual_prototypes,
            &self.textual_prototypes,
            &self.fusion,
        )?;
        let (tv, tt) = (self.fusion.tau_v(), self.fusion.tau_t());
        let (p_visual, p_text) = fusion::modality_probs(&fused, tv, tt)?;
        let cross = fusion::cross_loss(&fused, s.label, tv, tt)?;
        Ok(SampleOutputs {
            p,
            p_local,
            fused,
            p_visual,
            p_text,
            losses: LossParts { global, local, cross },
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.put_text(
            "config",
            serde_json::to_string_pretty(&self.config).expect("config serializes"),
        );
        c.put_text(
            "classes",
            serde_json::to_string(&self.class_names).expect("names serialize"),
        );
        c.put_tensor("prompt.global_ctx", &self.bank.global_ctx);
        c.put_tensor("prompt.local_ctx", &self.bank.local_ctx);
        c.put_tensor("prompt.class_tokens", &self.bank.class_tokens);
        for (name, t) in FUSION_SECTIONS.iter().zip(self.fusion.tensors()) {
            c.put_tensor(name, t);
        }
        c.put_tensor("prototypes.visual", &self.visual_prototypes);
        c.put_tensor("prototypes.textual", &self.textual_prototypes);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::Checkpoint(format!("config: {e}"));
        let config: TrainConfig = serde_json::from_str(c.text("config")?).map_err(bad)?;
        config.validate()?;
        let class_names: Vec<String> = serde_json::from_str(c.text("classes")?).map_err(bad)?;
        let k = class_names.len();
        let bank = PromptBank::new(
            c.tensor("prompt.global_ctx")?,
            c.tensor("prompt.local_ctx")?,
            c.tensor("prompt.class_tokens")?,
        )?;
        if bank.num_classes() != k || bank.prompt_len() != config.prompt_len {
            return Err(Error::Checkpoint("prompt bank disagrees with config".into()));
        }
        let w_img = c.tensor("fusion.w_img")?;
        let (d_enc, d) = (w_img.rows(), w_img.cols());
        if d != config.dim {
            return Err(Error::Checkpoint(format!(
                "fusion width {d}, config says {}",
                config.dim
            )));
        }
        let sq = [d, d];
        let row = [1, d];
        let attention = crate::attention::AttentionParams {
            heads: config.heads,
            w_q: c.tensor_shaped("attention.w_q", sq)?,
            b_q: c.tensor_shaped("attention.b_q", row)?,
            w_k: c.tensor_shaped("attention.w_k", sq)?,
            b_k: c.tensor_shaped("attention.b_k", row)?,
            w_v: c.tensor_shaped("attention.w_v", sq)?,
            b_v: c.tensor_shaped("attention.b_v", row)?,
            w_o: c.tensor_shaped("attention.w_o", sq)?,
        };
        let fusion = FusionParams {
            w_img,
            b_img: c.tensor_shaped("fusion.b_img", row)?,
            w_txt: c.tensor_shaped("fusion.w_txt", [d_enc, d])?,
            b_txt: c.tensor_shaped("fusion.b_txt", row)?,
            attention,
            log_tau_v: c.tensor_shaped("fusion.log_tau_v", [1, 1])?,
            log_tau_t: c.tensor_shaped("fusion.log_tau_t", [1, 1])?,
        };
        Ok(Self {
            config,
            class_names,
            bank,
            fusion,
            visual_prototypes: c.tensor_shaped("prototypes.visual", [k, d_enc])?,
            textual_prototypes: c.tensor_shaped("prototypes.textual", [k, d_enc])?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

/// Section names in [`FusionParams::tensors`] order.
const FUSION_SECTIONS: [&str; 13] = [
    "fusion.w_img",
    "fusion.b_img",
    "fusion.w_txt",
    "fusion.b_txt",
    "attention.w_q",
    "attention.b_q",
    "attention.w_k",
    "attention.b_k",
    "attention.w_v",
    "attention.b_v",
    "attention.w_o",
    "fusion.log_tau_v",
    "fusion.log_tau_t",
];

/// Minibatch AdamW over `samples` for `model.config.epochs` epochs.
pub fn fit(model: &mut AlignmentModel, samples: &[Sample], encoder: &dyn EncoderProvider) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let config = model.config.clone();
    config.validate()?;
    let mut opt = AdamWState::new(config.adamw(), &model.trainable());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport::default();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let chunks: Vec<Vec<&Sample>> = batch
                .chunks(CHUNK)
                .map(|c| c.iter().map(|&i| &samples[i]).collect())
                .collect();
            let parts = chunks
                .par_iter()
                .map(|c| model.loss_gradients(c, encoder))
                .collect::<Result<Vec<_>>>()?;
            let mut parts = parts.into_iter();
            let (mut loss, mut grads) = parts.next().expect("nonempty batch");
            for (l, gs) in parts {
                loss += l;
                for (acc, g) in grads.iter_mut().zip(&gs) {
                    acc.add_assign(g);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let grads: Vec<Tensor> = grads.iter().map(|g| g.map(|v| v * scale)).collect();
            opt.step(&mut model.trainable_mut(), &grads)?;
            report.batch_losses.push(loss * scale);
            epoch_sum += loss;
        }
        report.epoch_losses.push(epoch_sum / samples.len() as f64);
    }
    Ok(report)
}

/// Initializes a model and fits it on the posts named by `train_ids`.
pub fn train_alignment(
    dataset: &Dataset,
    train_ids: &[String],
    encoder: &dyn EncoderProvider,
    prototypes: &PrototypeSet,
    config: &TrainConfig,
) -> Result<(AlignmentModel, TrainReport)> {
    if train_ids.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let samples = load_samples(dataset, train_ids, encoder, config.text_source)?;
    let mut model = AlignmentModel::init(config, encoder, &dataset.classes, prototypes)?;
    let report = fit(&mut model, &samples, encoder)?;
    Ok((model, report))
}

/// Total loss of every sample under the current parameters.
pub fn per_sample_losses(
    model: &AlignmentModel,
    samples: &[Sample],
    encoder: &dyn EncoderProvider,
) -> Result<BTreeMap<String, f64>> {
    let embeds = model.class_embeds(encoder)?;
    let losses = samples
        .par_iter()
        .map(|s| Ok((s.id.clone(), model.evaluate(s, &embeds)?.losses.total())))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.into_iter().collect())
}

/// Number of posts kept at ratio `rho` out of `n`.
pub fn selection_size(n: usize, rho: f64) -> usize {
    // tolerance absorbs products like 0.29 · 100 = 28.999…
    ((rho * n as f64 + 1e-9).floor() as usize).clamp(1, n)
}

/// The `⌊ρ·n⌋` lowest-loss ids (at least one), sorted by id. Ties in loss go
/// to the lexicographically smaller id.
pub fn select_samples(losses: &BTreeMap<String, f64>, rho: f64) -> Result<Vec<String>> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::invalid(format!("selection ratio must lie in (0, 1], got {rho}")));
    }
    if losses.is_empty() {
        return Err(Error::invalid("empty loss table"));
    }
    let mut ranked: Vec<(&String, f64)> = losses.iter().map(|(k, &v)| (k, v)).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let mut keep: Vec<String> = ranked[..selection_size(ranked.len(), rho)]
        .iter()
        .map(|(k, _)| (*k).clone())
        .collect();
    keep.sort();
    Ok(keep)
}

/// Column names of [`extract_features`].
pub fn feature_columns(model: &AlignmentModel) -> Vec<String> {
    let d_enc = model.input_dim();
    let mut cols: Vec<String> = (0..d_enc).map(|i| format!("image.{i}")).collect();
    cols.extend((0..d_enc).map(|i| format!("text.{i}")));
    let per_class = |block: &'static str| model.class_names.iter().map(move |c| format!("{block}.{c}"));
    cols.extend(per_class("p_global"));
    cols.extend(per_class("p_local"));
    cols.extend((0..model.fusion.dim()).map(|i| format!("fused.{i}")));
    cols.extend(per_class("p_visual"));
    cols.extend(per_class("p_text"));
    cols.extend(USER_STAT_NAMES.iter().map(|n| format!("stat.{n}")));
    cols
}

fn stats_for<'a>(stats: &'a BTreeMap<String, UserStats>, id: &str) -> Result<&'a UserStats> {
    stats
        .get(id)
        .ok_or_else(|| Error::UnknownId(format!("{id} has no user statistics")))
}

/// `[image, h, p, p′, x̃, p_V, p_T, user stats]` per sample, in sample order.
pub fn extract_features(
    model: &AlignmentModel,
    samples: &[Sample],
    encoder: &dyn EncoderProvider,
    stats: &BTreeMap<String, UserStats>,
) -> Result<FeatureTable> {
    let embeds = model.class_embeds(encoder)?;
    let width = model.feature_width();
    let rows = samples
        .par_iter()
        .map(|s| {
            let o = model.evaluate(s, &embeds)?;
            let mut row: Vec<f64> = Vec::with_capacity(width);
            row.extend(&s.image);
            row.extend(&s.text.global);
            row.extend(&o.p);
            row.extend(&o.p_local);
            row.extend(&o.fused.sample);
            row.extend(&o.p_visual);
            row.extend(&o.p_text);
            row.extend(stats_for(stats, &s.id)?.as_slice());
            debug_assert_eq!(row.len(), width);
            Ok(row.into_iter().map(|v| v as f32).collect::<Vec<f32>>())
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureTable::new(
        samples.iter().map(|s| s.id.clone()).collect(),
        feature_columns(model),
        rows.concat(),
    )
}

/// Encoder outputs and user statistics only: `[image, h, user stats]`.
pub fn frozen_features(samples: &[Sample], stats: &BTreeMap<String, UserStats>) -> Result<FeatureTable> {
    let d_enc = samples.first().map_or(0, |s| s.image.len());
    let mut cols: Vec<String> = (0..d_enc).map(|i| format!("image.{i}")).collect();
    cols.extend((0..d_enc).map(|i| format!("text.{i}")));
    cols.extend(USER_STAT_NAMES.iter().map(|n| format!("stat.{n}")));
    let mut values = Vec::with_capacity(samples.len() * cols.len());
    for s in samples {
        values.extend(s.image.iter().chain(&s.text.global).map(|&v| v as f32));
        values.extend(stats_for(stats, &s.id)?.as_slice().iter().map(|&v| v as f32));
    }
    FeatureTable::new(samples.iter().map(|s| s.id.clone()).collect(), cols, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_user_stats, generate_synthetic, SynthConfig, SyntheticCorpus};
    use crate::encoder::TableEncoder;
    use crate::prototypes::{build_prototypes, SamplingPlan};

    struct Fixture {
        corpus: SyntheticCorpus,
        encoder: TableEncoder,
        protos: PrototypeSet,
    }

    fn fixture(posts_per_class: usize) -> Fixture {
        let corpus = generate_synthetic(&SynthConfig {
            classes: 4,
            posts_per_class,
            dim: 8,
            ..Default::default()
        })
        .unwrap();
        let encoder = TableEncoder::from_synthetic(&corpus).unwrap();
        let protos = build_prototypes(&corpus.dataset, &encoder, &SamplingPlan::default(), 0).unwrap();
        Fixture {
            corpus,
            encoder,
            protos,
        }
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            dim: 8,
            heads: 2,
            prompt_len: 3,
            batch_size: 16,
            ..Default::default()
        }
    }

    fn ids(f: &Fixture) -> Vec<String> {
        f.corpus.dataset.posts.iter().map(|p| p.post_id.clone()).collect()
    }

    #[test]
    fn selection_examples() {
        let losses: BTreeMap<String, f64> = [("a", 0.1), ("b", 0.5), ("c", 0.2), ("d", 0.9)]
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v))
            .collect();
        assert_eq!(select_samples(&losses, 0.77).unwrap(), vec!["a", "b", "c"]);
        assert_eq!(select_samples(&losses, 1.0).unwrap(), vec!["a", "b", "c", "d"]);
        assert_eq!(select_samples(&losses, 0.01).unwrap(), vec!["a"]);
        let tied: BTreeMap<String, f64> = ["z", "m", "a", "q"].iter().map(|k| (k.to_string(), 1.0)).collect();
        assert_eq!(select_samples(&tied, 0.5).unwrap(), vec!["a", "m"]);
        assert!(select_samples(&losses, 0.0).is_err());
        assert!(select_samples(&losses, 1.5).is_err());
        assert!(select_samples(&BTreeMap::new(), 0.5).is_err());
    }

    #[test]
    fn selection_nests() {
        let losses: BTreeMap<String, f64> = (0..50).map(|i| (format!("p{i:02}"), ((i * 37) % 11) as f64)).collect();
        let mut prev: Vec<String> = Vec::new();
        for rho in [0.1, 0.3, 0.5, 0.77, 1.0] {
            let s = select_samples(&losses, rho).unwrap();
            assert!(prev.iter().all(|id| s.contains(id)));
            prev = s;
        }
        assert_eq!(selection_size(100, 0.29), 29);
    }

    #[test]
    fn feature_width_arithmetic() {
        let f = fixture(10);
        let model = AlignmentModel::init(&small_config(), &f.encoder, &f.corpus.dataset.classes, &f.protos).unwrap();
        assert_eq!(model.feature_width(), 8 + 8 + 4 + 4 + 8 + 4 + 4 + 8);
        assert_eq!(feature_columns(&model).len(), model.feature_width());
    }

    #[test]
    fn graph_loss_matches_evaluation() {
        let f = fixture(10);
        let model = AlignmentModel::init(&small_config(), &f.encoder, &f.corpus.dataset.classes, &f.protos).unwrap();
        let samples = load_samples(&f.corpus.dataset, &ids(&f)[..5], &f.encoder, TextSource::Title).unwrap();
        let embeds = model.class_embeds(&f.encoder).unwrap();
        for s in &samples {
            let (l, _) = model.loss_gradients(&[s], &f.encoder).unwrap();
            let want = model.evaluate(s, &embeds).unwrap().losses.total();
            assert!((l - want).abs() < 1e-10, "{l} vs {want}");
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let f = fixture(10);
        let config = TrainConfig {
            lr: 0.0,
            weight_decay: 0.0,
            epochs: 3,
            ..small_config()
        };
        let samples = load_samples(&f.corpus.dataset, &ids(&f), &f.encoder, TextSource::Title).unwrap();
        let mut model = AlignmentModel::init(&config, &f.encoder, &f.corpus.dataset.classes, &f.protos).unwrap();
        let before = model.clone();
        let report = fit(&mut model, &samples, &f.encoder).unwrap();
        assert_eq!(model, before);
        for w in report.epoch_losses.windows(2) {
            assert!((w[0] - w[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn training_is_deterministic_and_checkpoints_round_trip() {
        let f = fixture(12);
        let run = || {
            train_alignment(
                &f.corpus.dataset,
                &ids(&f),
                &f.encoder,
                &f.protos,
                &TrainConfig {
                    lr: 1e-2,
                    epochs: 2,
                    ..small_config()
                },
            )
            .unwrap()
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(ra, rb);
        assert_eq!(a.to_checkpoint().to_bytes(), b.to_checkpoint().to_bytes());
        let back =
            AlignmentModel::from_checkpoint(&Checkpoint::from_bytes(&a.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn single_sample_is_memorized() {
        let f = fixture(10);
        let config = TrainConfig {
            lr: 2e-2,
            weight_decay: 0.0,
            epochs: 300,
            ..small_config()
        };
        let samples = load_samples(&f.corpus.dataset, &ids(&f)[..1], &f.encoder, TextSource::Title).unwrap();
        let mut model = AlignmentModel::init(&config, &f.encoder, &f.corpus.dataset.classes, &f.protos).unwrap();
        let report = fit(&mut model, &samples, &f.encoder).unwrap();
        let embeds = model.class_embeds(&f.encoder).unwrap();
        let out = model.evaluate(&samples[0], &embeds).unwrap();
        assert!(out.losses.cross < 1e-3, "{:?}", out.losses);
        assert!(
            report.epoch_losses.last().unwrap() < &(0.25 * report.epoch_losses[0]),
            "{:?}",
            report.epoch_losses
        );
    }

    #[test]
    fn features_are_frozen_where_expected() {
        let f = fixture(10);
        let all = ids(&f);
        let stats = compute_user_stats(&f.corpus.dataset, &all).unwrap();
        let samples = load_samples(&f.corpus.dataset, &all, &f.encoder, TextSource::Title).unwrap();
        let init = AlignmentModel::init(&small_config(), &f.encoder, &f.corpus.dataset.classes, &f.protos).unwrap();
        let mut trained = init.clone();
        trained.config.lr = 1e-2;
        fit(&mut trained, &samples, &f.encoder).unwrap();
        let a = extract_features(&init, &samples, &f.encoder, &stats).unwrap();
        let b = extract_features(&trained, &samples, &f.encoder, &stats).unwrap();
        assert_eq!(a.width(), init.feature_width());
        let raw = |t: &FeatureTable| t.select_blocks(&["image", "text", "stat"]).unwrap();
        assert_eq!(raw(&a), raw(&b));
        assert_eq!(raw(&a), frozen_features(&samples, &stats).unwrap());
        assert_ne!(
            a.select_blocks(&["p_global"]).unwrap(),
            b.select_blocks(&["p_global"]).unwrap()
        );
        let dup = load_samples(
            &f.corpus.dataset,
            &[all[3].clone(), all[3].clone()],
            &f.encoder,
            TextSource::Title,
        )
        .unwrap();
        let d = extract_features(&init, &dup, &f.encoder, &stats).unwrap();
        assert_eq!(d.row(0), d.row(1));
    }

    #[test]
    fn per_sample_losses_are_pure() {
        let f = fixture(10);
        let samples = load_samples(&f.corpus.dataset, &ids(&f), &f.encoder, TextSource::Title).unwrap();
        let model = AlignmentModel::init(&small_config(), &f.encoder, &f.corpus.dataset.classes, &f.protos).unwrap();
        let a = per_sample_losses(&model, &samples, &f.encoder).unwrap();
        assert_eq!(a, per_sample_losses(&model, &samples, &f.encoder).unwrap());
        assert_eq!(a.len(), samples.len());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                selection_ratio: 0.0,
                ..Default::default()
            },
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                heads: 3,
                ..Default::default()
            },
            TrainConfig {
                tau_s: 0.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!(serde_json::from_str::<TrainConfig>("{\"lr\": 0.1, \"bogus\": 1}").is_err());
    }
}
