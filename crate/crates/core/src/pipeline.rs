//! Run configuration and the in-memory stages shared by the command line
//! and the experiment grid.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{compute_user_stats, split_dataset, Dataset, Split, SynthConfig, UserStats};
use crate::encoder::EncoderProvider;
use crate::error::{Error, Result};
use crate::features::{block_of, FeatureTable};
use crate::gbdt::{fit_gbdt, fuse_predictions, oversample_tail, Forest, GbdtConfig, Regressor};
use crate::metrics::{mae, spearman};
use crate::prototypes::{build_prototypes, PrototypeSet, SamplingPlan};
use crate::tensor::Tensor;
use crate::trainer::{
    extract_features, fit, frozen_features, load_samples, select_samples, AlignmentModel, Sample, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OversampleConfig {
    /// Labels strictly above this are tail samples.
    pub threshold: f64,
    /// Copies of each tail sample, `1` disables oversampling.
    pub factor: usize,
}

impl Default for OversampleConfig {
    fn default() -> Self {
        Self {
            threshold: 12.0,
            factor: 2,
        }
    }
}

/// Which feature blocks the regressors see.
///
/// The encoder outputs (`image`, `text`) are always included. `aligned` adds
/// the alignment-model outputs, `statistic` the post-level statistics, and
/// `user` the per-user aggregates. Written as `frozen` or `aligned`,
/// optionally followed by `+statistic` and `+user`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FeatureSet {
    pub aligned: bool,
    pub statistic: bool,
    pub user: bool,
}

const ALIGNED_BLOCKS: [&str; 5] = ["p_global", "p_local", "fused", "p_visual", "p_text"];
const USER_STATS: [&str; 3] = ["log_user_post_count", "user_mean_popularity", "user_std_popularity"];

impl FeatureSet {
    pub const FULL: Self = Self {
        aligned: true,
        statistic: true,
        user: true,
    };

    /// The six rows of the experiment grid.
    pub fn grid() -> Vec<Self> {
        let mut out = Vec::new();
        for aligned in [false, true] {
            for (statistic, user) in [(false, false), (true, false), (true, true)] {
                out.push(Self {
                    aligned,
                    statistic,
                    user,
                });
            }
        }
        out
    }

    pub fn keeps(&self, column: &str) -> bool {
        match block_of(column) {
            "image" | "text" => true,
            "stat" => {
                let name = column.split_once('.').map_or("", |(_, n)| n);
                if USER_STATS.contains(&name) {
                    self.user
                } else {
                    self.statistic
                }
            }
            b if ALIGNED_BLOCKS.contains(&b) => self.aligned,
            _ => false,
        }
    }

    pub fn apply(&self, table: &FeatureTable) -> Result<FeatureTable> {
        if self.aligned && !table.blocks().contains(&"p_global") {
            return Err(Error::invalid(format!("feature set {self} needs aligned features")));
        }
        table.select_columns(|c| self.keeps(c))
    }
}

impl Default for FeatureSet {
    fn default() -> Self {
        Self::FULL
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.aligned { "aligned" } else { "frozen" })?;
        if self.statistic {
            f.write_str("+statistic")?;
        }
        if self.user {
            f.write_str("+user")?;
        }
        Ok(())
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('+');
        let aligned = match parts.next() {
            Some("aligned") => true,
            Some("frozen") => false,
            _ => {
                return Err(Error::invalid(format!(
                    "feature set {s:?} must start with aligned or frozen"
                )))
            }
        };
        let mut out = Self {
            aligned,
            statistic: false,
            user: false,
        };
        for p in parts {
            match p {
                "statistic" => out.statistic = true,
                "user" => out.user = true,
                other => return Err(Error::invalid(format!("unknown feature block {other:?}"))),
            }
        }
        Ok(out)
    }
}

impl TryFrom<String> for FeatureSet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FeatureSet> for String {
    fn from(f: FeatureSet) -> Self {
        f.to_string()
    }
}

/// Every tunable of a run. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds data generation, the split, shot selection, and training.
    pub seed: u64,
    pub synth: SynthConfig,
    pub val_fraction: f64,
    pub sampling: SamplingPlan,
    pub train: TrainConfig,
    pub gbdt_a: GbdtConfig,
    pub gbdt_b: GbdtConfig,
    pub oversample: OversampleConfig,
    pub feature_set: FeatureSet,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthConfig::default(),
            val_fraction: 0.2,
            sampling: SamplingPlan::default(),
            train: TrainConfig::default(),
            gbdt_a: GbdtConfig::config_a(),
            gbdt_b: GbdtConfig::config_b(),
            oversample: OversampleConfig::default(),
            feature_set: FeatureSet::FULL,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut c: Self = serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        c.set_seed(c.seed);
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Propagates the master seed to the stages it governs.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.oversample.factor == 0 {
            return Err(Error::invalid("oversample.factor must be at least 1"));
        }
        self.train.validate()
    }
}

pub fn labels_of(dataset: &Dataset, ids: &[String]) -> Result<Vec<f64>> {
    ids.iter()
        .map(|id| {
            dataset
                .get(id)
                .map(|p| p.popularity)
                .ok_or_else(|| Error::UnknownId(id.clone()))
        })
        .collect()
}

pub fn classes_of(dataset: &Dataset, ids: &[String]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            dataset
                .get(id)
                .map(|p| p.class_index)
                .ok_or_else(|| Error::UnknownId(id.clone()))
        })
        .collect()
}

/// Dataset, split, and split-aware user statistics.
pub struct Prepared {
    pub dataset: Dataset,
    pub split: Split,
    pub stats: BTreeMap<String, UserStats>,
}

pub fn prepare(dataset: Dataset, config: &RunConfig) -> Result<Prepared> {
    let split = split_dataset(&dataset, config.val_fraction, config.seed)?;
    let stats = compute_user_stats(&dataset, &split.train)?;
    Ok(Prepared { dataset, split, stats })
}

/// Prototypes from the training posts only.
pub fn train_prototypes(
    prepared: &Prepared,
    encoder: &dyn EncoderProvider,
    config: &RunConfig,
) -> Result<PrototypeSet> {
    let train = prepared.dataset.subset(&prepared.split.train)?;
    build_prototypes(&train, encoder, &config.sampling, config.seed)
}

/// Encoded train and validation samples.
pub struct Samples {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

pub fn encode_split(prepared: &Prepared, encoder: &dyn EncoderProvider, config: &RunConfig) -> Result<Samples> {
    let source = config.train.text_source;
    Ok(Samples {
        train: load_samples(&prepared.dataset, &prepared.split.train, encoder, source)?,
        val: load_samples(&prepared.dataset, &prepared.split.val, encoder, source)?,
    })
}

/// Initializes a model and fits it on `samples`.
pub fn train_model(
    prepared: &Prepared,
    samples: &[Sample],
    encoder: &dyn EncoderProvider,
    prototypes: &PrototypeSet,
    config: &TrainConfig,
) -> Result<(AlignmentModel, crate::trainer::TrainReport)> {
    let mut model = AlignmentModel::init(config, encoder, &prepared.dataset.classes, prototypes)?;
    let report = fit(&mut model, samples, encoder)?;
    Ok((model, report))
}

/// Train and validation feature tables; frozen-only when `model` is `None`.
pub fn feature_tables(
    model: Option<&AlignmentModel>,
    samples: &Samples,
    encoder: &dyn EncoderProvider,
    stats: &BTreeMap<String, UserStats>,
) -> Result<(FeatureTable, FeatureTable)> {
    match model {
        Some(m) => Ok((
            extract_features(m, &samples.train, encoder, stats)?,
            extract_features(m, &samples.val, encoder, stats)?,
        )),
        None => Ok((
            frozen_features(&samples.train, stats)?,
            frozen_features(&samples.val, stats)?,
        )),
    }
}

fn rows_of(t: &Tensor, idx: &[usize]) -> Tensor {
    let rows: Vec<&[f64]> = idx.iter().map(|&i| t.row_slice(i)).collect();
    Tensor::from_rows(&rows).expect("rows come from a valid tensor")
}

/// Fits one forest on oversampled training rows.
pub fn fit_forest(
    features: &Tensor,
    labels: &[f64],
    config: &GbdtConfig,
    oversample: &OversampleConfig,
) -> Result<Forest> {
    let idx = oversample_tail(labels, oversample.threshold, oversample.factor)?;
    let x = rows_of(features, &idx);
    let y: Vec<f64> = idx.iter().map(|&i| labels[i]).collect();
    fit_gbdt(&x, &y, config)
}

/// Validation metrics of one predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub src: f64,
    pub mae: f64,
}

impl Score {
    pub fn of(labels: &[f64], pred: &[f64]) -> Result<Self> {
        Ok(Self {
            src: spearman(labels, pred)?,
            mae: mae(labels, pred)?,
        })
    }
}

/// Both forests, their validation-tuned blend, and the validation scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionRun {
    pub regressor: Regressor,
    pub score_a: Score,
    pub score_b: Score,
    pub score_fused: Score,
    pub val_predictions: Vec<f64>,
}

pub fn fit_regressor(
    train: &FeatureTable,
    train_labels: &[f64],
    val: &FeatureTable,
    val_labels: &[f64],
    config: &RunConfig,
) -> Result<RegressionRun> {
    if train.columns() != val.columns() {
        return Err(Error::invalid("train and validation features have different columns"));
    }
    let (xt, xv) = (train.to_tensor(), val.to_tensor());
    let a = fit_forest(&xt, train_labels, &config.gbdt_a, &config.oversample)?;
    let b = fit_forest(&xt, train_labels, &config.gbdt_b, &config.oversample)?;
    let (pa, pb) = (a.predict(&xv)?, b.predict(&xv)?);
    let fusion = fuse_predictions(&pa, &pb, val_labels)?;
    let fused = fusion.blend(&pa, &pb);
    Ok(RegressionRun {
        score_a: Score::of(val_labels, &pa)?,
        score_b: Score::of(val_labels, &pb)?,
        score_fused: Score::of(val_labels, &fused)?,
        val_predictions: fused,
        regressor: Regressor {
            a,
            b,
            fusion,
            columns: train.columns().to_vec(),
        },
    })
}

/// Validation scores after fitting on the `ratio` lowest-loss training rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub train_rows: usize,
    pub score: Score,
}

/// Fits the regressors once per ratio; losses rank the training rows.
pub fn selection_sweep(
    dataset: &Dataset,
    losses: &BTreeMap<String, f64>,
    train: &FeatureTable,
    val: &FeatureTable,
    ratios: &[f64],
    config: &RunConfig,
) -> Result<Vec<SweepRow>> {
    let yv = labels_of(dataset, val.ids())?;
    ratios
        .iter()
        .map(|&ratio| {
            let keep: std::collections::BTreeSet<String> = select_samples(losses, ratio)?.into_iter().collect();
            let subset = train.retain_rows(|id| keep.contains(id));
            let yt = labels_of(dataset, subset.ids())?;
            let run = fit_regressor(&subset, &yt, val, &yv, config)?;
            Ok(SweepRow {
                ratio,
                train_rows: subset.rows(),
                score: run.score_fused,
            })
        })
        .collect()
}

/// One feature-set row of the experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub features: FeatureSet,
    pub a: Score,
    pub b: Score,
    pub fused: Score,
    /// Weight of regressor A in the blend.
    pub w: f64,
}

/// Regressors for every feature set of [`FeatureSet::grid`], cut from full
/// aligned tables.
pub fn feature_grid(
    dataset: &Dataset,
    train: &FeatureTable,
    val: &FeatureTable,
    config: &RunConfig,
) -> Result<Vec<GridRow>> {
    let yt = labels_of(dataset, train.ids())?;
    let yv = labels_of(dataset, val.ids())?;
    FeatureSet::grid()
        .into_iter()
        .map(|features| {
            let run = fit_regressor(&features.apply(train)?, &yt, &features.apply(val)?, &yv, config)?;
            Ok(GridRow {
                features,
                a: run.score_a,
                b: run.score_b,
                fused: run.score_fused,
                w: run.regressor.fusion.w,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_set_names() {
        for f in FeatureSet::grid() {
            assert_eq!(f.to_string().parse::<FeatureSet>().unwrap(), f);
        }
        assert_eq!(FeatureSet::FULL.to_string(), "aligned+statistic+user");
        assert!("clip".parse::<FeatureSet>().is_err());
        assert!("frozen+bogus".parse::<FeatureSet>().is_err());
        let frozen: FeatureSet = "frozen+user".parse().unwrap();
        assert!(frozen.keeps("stat.user_std_popularity"));
        assert!(!frozen.keeps("stat.hour_sin"));
        assert!(!frozen.keeps("p_visual.sub00"));
        assert!(frozen.keeps("image.0"));
    }

    #[test]
    fn config_json_round_trip_and_rejection() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert!(RunConfig::from_json("{\"sed\": 1}").is_err());
        assert!(RunConfig::from_json("{\"train\": {\"epochs\": 0}}").is_err());
        let s = RunConfig::from_json("{\"seed\": 7}").unwrap();
        assert_eq!((s.synth.seed, s.train.seed), (7, 7));
    }
}
