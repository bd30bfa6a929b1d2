//! Diversity-aware shot selection and per-class visual/textual prototypes.
//!
//! Selection for one class runs in three stages:
//!
//! 1. **Temporal.** The class timeline is cut into `temporal_bins` equal-width
//!    intervals. Each nonempty bin gets a quota proportional to its
//!    population, rounded by largest remainder (ties go to the earlier bin).
//! 2. **Subtopic.** Inside a bin, candidates are interleaved round-robin over
//!    the level-3 subtopics, each subtopic's posts in seeded random order.
//! 3. **User.** A post is skipped while its user already has `user_cap` shots.
//!
//! When the caps make a bin's quota unreachable the shortfall is first
//! borrowed from other bins (cap still enforced), and only then is the user
//! cap relaxed. Both relaxations are recorded in [`Relaxation`].

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClassTable, Dataset, PembFile, PembKind, PostRecord};
use crate::encoder::{EncoderProvider, TextSource};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingPlan {
    pub shots: usize,
    pub temporal_bins: usize,
    /// Defaults to `⌈shots / 16⌉` when unset.
    pub user_cap: Option<usize>,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            shots: 256,
            temporal_bins: 8,
            user_cap: None,
        }
    }
}

impl SamplingPlan {
    pub fn effective_user_cap(&self) -> usize {
        self.user_cap.unwrap_or_else(|| self.shots.div_ceil(16)).max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.shots == 0 || self.temporal_bins == 0 || self.user_cap == Some(0) {
            return Err(Error::invalid("shots, temporal_bins and user_cap must be at least 1"));
        }
        Ok(())
    }
}

/// Constraint relaxations applied while filling a class's shots.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relaxation {
    /// Shots taken beyond their bin's quota because another bin ran dry.
    pub borrowed: usize,
    /// Shots taken from users already at the cap.
    pub over_cap: usize,
}

impl Relaxation {
    pub fn any(&self) -> bool {
        self.borrowed > 0 || self.over_cap > 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinReport {
    pub population: usize,
    pub quota: usize,
    pub selected: usize,
}

/// Outcome of [`stratified_select`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub ids: Vec<String>,
    pub target: usize,
    pub user_cap: usize,
    pub bins: Vec<BinReport>,
    pub relaxation: Relaxation,
}

/// Quotas summing to `target`, proportional to `populations`, by largest
/// remainder with ties to the earlier bin.
pub fn proportional_quotas(populations: &[usize], target: usize) -> Vec<usize> {
    let n: usize = populations.iter().sum();
    if n == 0 {
        return vec![0; populations.len()];
    }
    let mut quotas: Vec<usize> = populations.iter().map(|&p| target * p / n).collect();
    let mut left = target - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..populations.len()).collect();
    // remainder numerators are exact integers: (target·p) mod n
    order.sort_by_key(|&b| (std::cmp::Reverse(target * populations[b] % n), b));
    for b in order {
        if left == 0 {
            break;
        }
        quotas[b] += 1;
        left -= 1;
    }
    quotas
}

fn bin_of(ts: i64, min: i64, max: i64, bins: usize) -> usize {
    if max == min {
        return 0;
    }
    let width = (max - min) as f64 / bins as f64;
    (((ts - min) as f64 / width) as usize).min(bins - 1)
}

struct Picker {
    taken: Vec<bool>,
    per_user: Vec<usize>,
    selected_in_bin: Vec<usize>,
    order: Vec<usize>,
}

impl Picker {
    fn take(&mut self, i: usize, bin: usize, user: usize) {
        self.taken[i] = true;
        self.per_user[user] += 1;
        self.selected_in_bin[bin] += 1;
        self.order.push(i);
    }
}

/// Picks up to `plan.shots` posts of a single class.
pub fn stratified_select(posts: &[&PostRecord], plan: &SamplingPlan, seed: u64) -> Result<Selection> {
    plan.validate()?;
    if posts.is_empty() {
        return Err(Error::invalid("cannot select shots from an empty class"));
    }
    let n = posts.len();
    let target = plan.shots.min(n);
    let cap = plan.effective_user_cap();
    let bins = plan.temporal_bins;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let min = posts.iter().map(|p| p.timestamp).min().unwrap_or(0);
    let max = posts.iter().map(|p| p.timestamp).max().unwrap_or(0);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for (i, p) in posts.iter().enumerate() {
        members[bin_of(p.timestamp, min, max, bins)].push(i);
    }
    let populations: Vec<usize> = members.iter().map(Vec::len).collect();
    let quotas = proportional_quotas(&populations, target);

    // candidate order per bin: subtopic round-robin over shuffled groups
    let candidates: Vec<Vec<usize>> = members
        .iter()
        .map(|m| {
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for &i in m {
                groups.entry(posts[i].subtopic()).or_default().push(i);
            }
            let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
            for g in &mut groups {
                g.shuffle(&mut rng);
            }
            let longest = groups.iter().map(Vec::len).max().unwrap_or(0);
            (0..longest)
                .flat_map(|round| groups.iter().filter_map(move |g| g.get(round).copied()))
                .collect()
        })
        .collect();

    let mut users: HashMap<&str, usize> = HashMap::new();
    let user_of: Vec<usize> = posts
        .iter()
        .map(|p| {
            let next = users.len();
            *users.entry(p.user_id.as_str()).or_insert(next)
        })
        .collect();
    let mut st = Picker {
        taken: vec![false; n],
        per_user: vec![0; users.len()],
        selected_in_bin: vec![0; bins],
        order: Vec::with_capacity(target),
    };
    let mut relaxation = Relaxation::default();

    for b in 0..bins {
        let mut got = 0;
        for &i in &candidates[b] {
            if got == quotas[b] {
                break;
            }
            if st.per_user[user_of[i]] < cap {
                st.take(i, b, user_of[i]);
                got += 1;
            }
        }
    }
    let mut missing = target - st.order.len();
    for relax_cap in [false, true] {
        for b in 0..bins {
            for &i in &candidates[b] {
                if missing == 0 {
                    break;
                }
                if st.taken[i] {
                    continue;
                }
                let at_cap = st.per_user[user_of[i]] >= cap;
                if at_cap && !relax_cap {
                    continue;
                }
                st.take(i, b, user_of[i]);
                missing -= 1;
                if at_cap {
                    relaxation.over_cap += 1;
                } else {
                    relaxation.borrowed += 1;
                }
            }
        }
    }
    let Picker {
        order, selected_in_bin, ..
    } = st;

    Ok(Selection {
        ids: order.iter().map(|&i| posts[i].post_id.clone()).collect(),
        target,
        user_cap: cap,
        bins: populations
            .iter()
            .zip(&quotas)
            .zip(&selected_in_bin)
            .map(|((&population, &quota), &selected)| BinReport {
                population,
                quota,
                selected,
            })
            .collect(),
        relaxation,
    })
}

/// Per-class selection seed; independent of evaluation order.
pub fn class_seed(seed: u64, class: usize) -> u64 {
    seed ^ (class as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProvenance {
    pub class: String,
    pub selection: Selection,
}

/// Visual (`V`) and textual (`T`) prototypes, `K × d` each, stored at f32
/// precision so they survive the file round trip unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub visual: Tensor,
    pub textual: Tensor,
    pub provenance: Vec<ClassProvenance>,
}

fn round_f32(v: f64) -> f64 {
    f64::from(v as f32)
}

fn mean_of_normalized(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    let mut out = vec![0.0; d];
    for r in rows {
        for (o, v) in out.iter_mut().zip(tensor::normalize(r)?) {
            *o += v;
        }
    }
    Ok(out.into_iter().map(|v| round_f32(v / rows.len() as f64)).collect())
}

/// Text-global vector for a shot: the title, or all tags when the title is empty.
fn shot_text(encoder: &dyn EncoderProvider, id: &str) -> Result<Vec<f64>> {
    let title = encoder.encode_text(id, TextSource::Title)?;
    if !title.padded {
        return Ok(title.global);
    }
    match encoder.encode_text(id, TextSource::AllTags) {
        Ok(tags) => Ok(tags.global),
        Err(Error::Invalid(_) | Error::EmptyText(_)) => Ok(title.global),
        Err(e) => Err(e),
    }
}

/// Selects shots for every class and averages their normalized embeddings.
pub fn build_prototypes(
    dataset: &Dataset,
    encoder: &dyn EncoderProvider,
    plan: &SamplingPlan,
    seed: u64,
) -> Result<PrototypeSet> {
    let groups = dataset.by_class();
    let per_class: Vec<Result<(Vec<f64>, Vec<f64>, ClassProvenance)>> = groups
        .par_iter()
        .enumerate()
        .map(|(class, members)| {
            let posts: Vec<&PostRecord> = members.iter().map(|&i| &dataset.posts[i]).collect();
            let selection = stratified_select(&posts, plan, class_seed(seed, class)).map_err(|e| match e {
                Error::Invalid(m) => Error::invalid(format!("class {}: {m}", dataset.classes.name(class))),
                other => other,
            })?;
            let images = selection
                .ids
                .iter()
                .map(|id| encoder.encode_image(id))
                .collect::<Result<Vec<_>>>()?;
            let texts = selection
                .ids
                .iter()
                .map(|id| shot_text(encoder, id))
                .collect::<Result<Vec<_>>>()?;
            Ok((
                mean_of_normalized(&images)?,
                mean_of_normalized(&texts)?,
                ClassProvenance {
                    class: dataset.classes.name(class).to_owned(),
                    selection,
                },
            ))
        })
        .collect();

    let d = encoder.dim();
    let k = groups.len();
    let mut visual = Vec::with_capacity(k * d);
    let mut textual = Vec::with_capacity(k * d);
    let mut provenance = Vec::with_capacity(k);
    for r in per_class {
        let (v, t, p) = r?;
        visual.extend(v);
        textual.extend(t);
        provenance.push(p);
    }
    Ok(PrototypeSet {
        visual: Tensor::new(k, d, visual)?,
        textual: Tensor::new(k, d, textual)?,
        provenance,
    })
}

impl PrototypeSet {
    pub fn num_classes(&self) -> usize {
        self.visual.rows()
    }

    pub fn dim(&self) -> usize {
        self.visual.cols()
    }

    /// Writes `prototypes_visual.pemb`, `prototypes_text.pemb` and
    /// `provenance.json`, rows keyed by class name.
    pub fn write(&self, dir: &Path, classes: &ClassTable) -> Result<()> {
        for (tensor, kind, name) in [
            (&self.visual, PembKind::ImageGlobal, "prototypes_visual.pemb"),
            (&self.textual, PembKind::TextGlobal, "prototypes_text.pemb"),
        ] {
            let rows: Vec<(String, Vec<f32>)> = (0..tensor.rows())
                .map(|i| {
                    (
                        classes.name(i).to_owned(),
                        tensor.row_slice(i).iter().map(|&v| v as f32).collect(),
                    )
                })
                .collect();
            crate::data::write_named_rows(&dir.join(name), kind, tensor.cols(), &rows)?;
        }
        let text = serde_json::to_string_pretty(&self.provenance).expect("provenance serializes");
        let path = dir.join("provenance.json");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path, classes: &ClassTable) -> Result<Self> {
        let load = |name: &str| -> Result<Tensor> {
            let f = PembFile::read(&dir.join(name))?;
            if f.entries.len() != classes.len() {
                return Err(Error::invalid(format!(
                    "{name}: {} rows for {} classes",
                    f.entries.len(),
                    classes.len()
                )));
            }
            let mut data = vec![0.0; classes.len() * f.dim];
            let mut seen = vec![false; classes.len()];
            for e in &f.entries {
                let i = classes
                    .index_of(&e.id)
                    .ok_or_else(|| Error::UnknownId(format!("{name}: class {}", e.id)))?;
                seen[i] = true;
                for (slot, &v) in data[i * f.dim..(i + 1) * f.dim].iter_mut().zip(&e.values) {
                    *slot = f64::from(v);
                }
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::invalid(format!("{name}: duplicate class rows")));
            }
            Ok(Tensor::new(classes.len(), f.dim, data)?)
        };
        let path = dir.join("provenance.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let provenance = serde_json::from_str(&text).map_err(|e| Error::invalid(format!("provenance.json: {e}")))?;
        Ok(Self {
            visual: load("prototypes_visual.pemb")?,
            textual: load("prototypes_text.pemb")?,
            provenance,
        })
    }
}
