//! Subcommand bodies. Each reads only the paths it is given and writes into
//! `--out`, which always receives a copy of the resolved configuration.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;

use protopop::checkpoint::Checkpoint;
use protopop::data::{generate_synthetic, load_manifest, DataError, Dataset};
use protopop::encoder::TableEncoder;
use protopop::features::FeatureTable;
use protopop::gbdt::Regressor;
use protopop::metrics::{format_table, per_class_report};
use protopop::pipeline::{
    classes_of, feature_grid, feature_tables, fit_regressor, labels_of, prepare, selection_sweep, train_model,
    train_prototypes, FeatureSet, Prepared, RunConfig, Samples, Score,
};
use protopop::prototypes::PrototypeSet;
use protopop::trainer::{load_samples, per_sample_losses, select_samples, AlignmentModel};

use crate::svg;
use crate::Common;

/// Failure detected by the command layer itself.
#[derive(Debug)]
pub struct CliError {
    kind: &'static str,
    msg: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self {
            kind: "config",
            msg: msg.into(),
        }
    }

    fn missing(path: &Path) -> Self {
        Self {
            kind: "missing_input",
            msg: format!("{} does not exist", path.display()),
        }
    }

    fn data(msg: impl Into<String>) -> Self {
        Self {
            kind: "data",
            msg: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for CliError {}

/// Category for the one-line error report.
pub fn kind_of(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<CliError>() {
            return c.kind;
        }
        if let Some(p) = cause.downcast_ref::<protopop::Error>() {
            return p.kind();
        }
        if let Some(d) = cause.downcast_ref::<DataError>() {
            return match d {
                DataError::Io { .. } => "io",
                DataError::Config(_) => "config",
                _ => "data",
            };
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
        if cause.is::<serde_json::Error>() {
            return "data";
        }
    }
    "internal"
}

fn require(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::missing(path).into())
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(require(p)?).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::from_json(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.set_seed(seed);
    }
    if let Some(s) = &common.source {
        config.train.text_source = s.parse().map_err(|e| CliError::config(format!("--source: {e}")))?;
    }
    config.validate().map_err(|e| CliError::config(e.to_string()))?;
    Ok(config)
}

/// Resolved configuration and a ready output directory holding its copy.
fn start(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let config = resolve_config(common)?;
    let out = common.out.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("config.json"), config.to_json())?;
    Ok((config, out))
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = dir.join("manifest.jsonl");
    Ok(load_manifest(require(&manifest)?, None)?)
}

fn load_data(dir: &Path, config: &RunConfig) -> Result<(Prepared, TableEncoder)> {
    let dataset = load_dataset(dir)?;
    let encoder = TableEncoder::from_dir(dir)?;
    Ok((prepare(dataset, config)?, encoder))
}

fn load_model(path: &Path) -> Result<AlignmentModel> {
    Ok(AlignmentModel::load(require(path)?)?)
}

fn read_table(path: &Path) -> Result<FeatureTable> {
    Ok(FeatureTable::read(require(path)?)?)
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(require(path)?).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_owned)
        .collect())
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

pub fn gen_synth(common: &Common) -> Result<()> {
    let (config, out) = start(common)?;
    let corpus = generate_synthetic(&config.synth)?;
    corpus.write(&out)?;
    println!(
        "wrote {} posts in {} classes to {}",
        corpus.dataset.len(),
        corpus.dataset.num_classes(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct WordCounts {
    posts: usize,
    empty: usize,
    mean: f64,
    max: usize,
    /// `histogram[k]` posts have exactly `k` words.
    histogram: Vec<usize>,
}

fn word_counts(counts: impl Iterator<Item = usize>) -> WordCounts {
    let counts: Vec<usize> = counts.collect();
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut histogram = vec![0; max + 1];
    for &c in &counts {
        histogram[c] += 1;
    }
    WordCounts {
        posts: counts.len(),
        empty: histogram[0],
        mean: counts.iter().sum::<usize>() as f64 / counts.len().max(1) as f64,
        max,
        histogram,
    }
}

pub fn stats(common: &Common, data: &Path) -> Result<()> {
    let (_, out) = start(common)?;
    let dataset = load_dataset(data)?;
    let title = word_counts(dataset.posts.iter().map(|p| p.title_tokens.len()));
    let tags = word_counts(dataset.posts.iter().map(|p| p.tag_tokens.len()));
    let mut rows = Vec::new();
    for (name, wc) in [("title", &title), ("tags", &tags)] {
        let bins: Vec<(usize, usize)> = wc.histogram.iter().copied().enumerate().collect();
        write(
            &out.join(format!("{name}_words.svg")),
            svg::histogram(&format!("{name} word count"), "words", &bins),
        )?;
        rows.push(vec![
            name.to_owned(),
            wc.posts.to_string(),
            wc.empty.to_string(),
            format!("{:.2}", wc.mean),
            wc.max.to_string(),
        ]);
    }
    write_json(
        &out.join("stats.json"),
        &json!({ "posts": dataset.len(), "title": title, "tags": tags }),
    )?;
    let table = format_table(&["field", "posts", "empty", "mean", "max"], &rows);
    write(&out.join("stats.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn build_prototypes(common: &Common, data: &Path) -> Result<()> {
    let (config, out) = start(common)?;
    let (prepared, encoder) = load_data(data, &config)?;
    let protos = train_prototypes(&prepared, &encoder, &config)?;
    protos.write(&out, &prepared.dataset.classes)?;
    let relaxed = protos
        .provenance
        .iter()
        .filter(|p| p.selection.relaxation.any())
        .count();
    println!(
        "built {} prototypes of dim {} ({relaxed} classes relaxed sampling constraints)",
        protos.num_classes(),
        protos.dim()
    );
    Ok(())
}

fn read_prototypes(dir: &Path, prepared: &Prepared) -> Result<PrototypeSet> {
    Ok(PrototypeSet::read(require(dir)?, &prepared.dataset.classes)?)
}

pub fn train_align(common: &Common, data: &Path, prototypes: &Path) -> Result<()> {
    let (config, out) = start(common)?;
    let (prepared, encoder) = load_data(data, &config)?;
    let protos = read_prototypes(prototypes, &prepared)?;
    let train = load_samples(
        &prepared.dataset,
        &prepared.split.train,
        &encoder,
        config.train.text_source,
    )?;
    let (model, report) = train_model(&prepared, &train, &encoder, &protos, &config.train)?;
    model.save(&out.join("model.ppck"))?;
    write_json(&out.join("train_report.json"), &report)?;
    for (e, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch {} loss {l:.6}", e + 1);
    }
    Ok(())
}

fn ratio_label(r: f64) -> String {
    format!("{r}")
}

pub fn select(
    common: &Common,
    data: &Path,
    model: &Path,
    ratios: &[f64],
    sweep: &[f64],
    features: Option<&Path>,
) -> Result<()> {
    let (config, out) = start(common)?;
    let (prepared, encoder) = load_data(data, &config)?;
    let model = load_model(model)?;
    let train = load_samples(
        &prepared.dataset,
        &prepared.split.train,
        &encoder,
        model.config.text_source,
    )?;
    let losses = per_sample_losses(&model, &train, &encoder)?;
    let mut tsv = String::from("post_id\tloss\n");
    for (id, l) in &losses {
        tsv += &format!("{id}\t{l}\n");
    }
    write(&out.join("losses.tsv"), tsv)?;

    let ratios = if ratios.is_empty() && sweep.is_empty() {
        vec![config.train.selection_ratio]
    } else {
        ratios.to_vec()
    };
    let mut summary = Vec::new();
    for &r in &ratios {
        let ids = select_samples(&losses, r)?;
        write(
            &out.join(format!("selected_{}.txt", ratio_label(r))),
            ids.join("\n") + "\n",
        )?;
        summary.push(json!({ "ratio": r, "kept": ids.len(), "total": losses.len() }));
        println!("ratio {r}: kept {} of {}", ids.len(), losses.len());
    }
    if !summary.is_empty() {
        write_json(&out.join("selection.json"), &summary)?;
    }

    if !sweep.is_empty() {
        let dir = features.ok_or_else(|| CliError::config("--sweep needs --features"))?;
        let train_t = config.feature_set.apply(&read_table(&dir.join("train.pfeat"))?)?;
        let val_t = config.feature_set.apply(&read_table(&dir.join("val.pfeat"))?)?;
        let rows = selection_sweep(&prepared.dataset, &losses, &train_t, &val_t, sweep, &config)?;
        write_json(&out.join("sweep.json"), &rows)?;
        let text_rows: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    ratio_label(r.ratio),
                    r.train_rows.to_string(),
                    f4(r.score.src),
                    f4(r.score.mae),
                ]
            })
            .collect();
        let table = format_table(&["ratio", "train rows", "SRC", "MAE"], &text_rows);
        write(&out.join("sweep.txt"), &table)?;
        print!("{table}");
    }
    Ok(())
}

pub fn extract(common: &Common, data: &Path, model: Option<&Path>) -> Result<()> {
    let (config, out) = start(common)?;
    let (prepared, encoder) = load_data(data, &config)?;
    let model = model.map(load_model).transpose()?;
    let source = model
        .as_ref()
        .map_or(config.train.text_source, |m| m.config.text_source);
    let samples = Samples {
        train: load_samples(&prepared.dataset, &prepared.split.train, &encoder, source)?,
        val: load_samples(&prepared.dataset, &prepared.split.val, &encoder, source)?,
    };
    let (train, val) = feature_tables(model.as_ref(), &samples, &encoder, &prepared.stats)?;
    train.write(&out.join("train.pfeat"))?;
    val.write(&out.join("val.pfeat"))?;
    println!(
        "extracted {} columns for {} train and {} validation posts",
        train.width(),
        train.rows(),
        val.rows()
    );
    Ok(())
}

#[derive(Serialize)]
struct Scores {
    feature_set: FeatureSet,
    train_rows: usize,
    a: Score,
    b: Score,
    fused: Score,
    w: f64,
}

fn score_rows(rows: &[(String, Score, Score, Score)]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|(name, a, b, f)| {
            vec![
                name.clone(),
                f4(a.src),
                f4(a.mae),
                f4(b.src),
                f4(b.mae),
                f4(f.src),
                f4(f.mae),
            ]
        })
        .collect()
}

const SCORE_HEADER: [&str; 7] = ["features", "A SRC", "A MAE", "B SRC", "B MAE", "fused SRC", "fused MAE"];

pub fn train_gbdt(
    common: &Common,
    data: &Path,
    features: &Path,
    selection: Option<&Path>,
    feature_set: Option<&str>,
) -> Result<()> {
    let (mut config, out) = start(common)?;
    if let Some(fs) = feature_set {
        config.feature_set = fs.parse()?;
        write(&out.join("config.json"), config.to_json())?;
    }
    let dataset = load_dataset(data)?;
    let mut train = config.feature_set.apply(&read_table(&features.join("train.pfeat"))?)?;
    let val = config.feature_set.apply(&read_table(&features.join("val.pfeat"))?)?;
    if let Some(p) = selection {
        let keep: BTreeSet<String> = read_ids(p)?.into_iter().collect();
        train = train.retain_rows(|id| keep.contains(id));
        if train.rows() != keep.len() {
            return Err(CliError::data(format!(
                "{} selected ids but {} match training rows",
                keep.len(),
                train.rows()
            ))
            .into());
        }
    }
    let yt = labels_of(&dataset, train.ids())?;
    let yv = labels_of(&dataset, val.ids())?;
    let run = fit_regressor(&train, &yt, &val, &yv, &config)?;
    run.regressor.to_checkpoint().write(&out.join("regressor.ppck"))?;
    write_json(
        &out.join("scores.json"),
        &Scores {
            feature_set: config.feature_set,
            train_rows: train.rows(),
            a: run.score_a,
            b: run.score_b,
            fused: run.score_fused,
            w: run.regressor.fusion.w,
        },
    )?;
    let table = format_table(
        &SCORE_HEADER,
        &score_rows(&[(
            config.feature_set.to_string(),
            run.score_a,
            run.score_b,
            run.score_fused,
        )]),
    );
    print!("{table}");
    Ok(())
}

pub fn predict(common: &Common, regressor: &Path, features: &Path) -> Result<()> {
    let (_, out) = start(common)?;
    let reg = Regressor::from_checkpoint(&Checkpoint::read(require(regressor)?)?)?;
    let table = read_table(features)?;
    let wanted: BTreeSet<&str> = reg.columns.iter().map(String::as_str).collect();
    let table = table.select_columns(|c| wanted.contains(c))?;
    if table.columns() != reg.columns.as_slice() {
        return Err(CliError::data(format!(
            "{} lacks columns the regressor was trained on",
            features.display()
        ))
        .into());
    }
    let pred = reg.predict(&table.to_tensor())?;
    let mut csv = String::from("post_id,prediction\n");
    for (id, p) in table.ids().iter().zip(&pred) {
        csv += &format!("{id},{p}\n");
    }
    write(&out.join("predictions.csv"), csv)?;
    println!("wrote {} predictions", pred.len());
    Ok(())
}

fn read_predictions(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    let text = fs::read_to_string(require(path)?).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("post_id,prediction") {
        return Err(CliError::data(format!("{}: expected header post_id,prediction", path.display())).into());
    }
    let (mut ids, mut values) = (Vec::new(), Vec::new());
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || {
            CliError::data(format!(
                "{} line {}: expected post_id,prediction",
                path.display(),
                n + 2
            ))
        };
        let (id, v) = line.rsplit_once(',').ok_or_else(bad)?;
        ids.push(id.to_owned());
        values.push(v.trim().parse::<f64>().map_err(|_| bad())?);
    }
    Ok((ids, values))
}

pub fn eval(common: &Common, data: &Path, predictions: &Path) -> Result<()> {
    let (_, out) = start(common)?;
    let dataset = load_dataset(data)?;
    let (ids, pred) = read_predictions(predictions)?;
    let y = labels_of(&dataset, &ids)?;
    let classes = classes_of(&dataset, &ids)?;
    let names: Vec<String> = dataset.classes.entries().iter().map(|e| e.name.clone()).collect();
    let report = per_class_report(&y, &pred, &classes, &names)?;
    write_json(&out.join("metrics.json"), &report)?;
    let text = report.to_text();
    write(&out.join("metrics.txt"), &text)?;
    write(
        &out.join("scatter.svg"),
        svg::scatter("predicted vs actual popularity", &y, &pred),
    )?;
    print!("{text}");
    Ok(())
}

pub fn grid(common: &Common, data: &Path) -> Result<()> {
    let (config, out) = start(common)?;
    let (prepared, encoder) = load_data(data, &config)?;
    let protos = train_prototypes(&prepared, &encoder, &config)?;
    let source = config.train.text_source;
    let samples = Samples {
        train: load_samples(&prepared.dataset, &prepared.split.train, &encoder, source)?,
        val: load_samples(&prepared.dataset, &prepared.split.val, &encoder, source)?,
    };
    let (model, _) = train_model(&prepared, &samples.train, &encoder, &protos, &config.train)?;
    let (train, val) = feature_tables(Some(&model), &samples, &encoder, &prepared.stats)?;
    let rows = feature_grid(&prepared.dataset, &train, &val, &config)?;
    write_json(&out.join("grid.json"), &rows)?;
    let named: Vec<(String, Score, Score, Score)> = rows
        .iter()
        .map(|r| (r.features.to_string(), r.a, r.b, r.fused))
        .collect();
    let table = format_table(&SCORE_HEADER, &score_rows(&named));
    write(&out.join("grid.txt"), &table)?;
    print!("{table}");
    Ok(())
}
