//! Hand-crafted per-post user-behavior features.
//!
//! All user and tag aggregates come from the training split only, so the
//! features of any post never depend on a non-training label.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::f64::consts::PI;

use super::{DataError, Dataset, PostRecord, Result};

pub const USER_STAT_NAMES: [&str; 8] = [
    "log_user_post_count",
    "user_mean_popularity",
    "user_std_popularity",
    "tag_count",
    "title_token_count",
    "log_mean_tag_frequency",
    "hour_sin",
    "hour_cos",
];

/// The eight features, in [`USER_STAT_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserStats(pub [f64; 8]);

impl UserStats {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Population mean and standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.max(0.0).sqrt())
}

fn hour_of_day(timestamp: i64) -> f64 {
    (timestamp.rem_euclid(86_400) / 3_600) as f64
}

/// Features for every post in `dataset`, keyed by post id.
pub fn compute_user_stats(dataset: &Dataset, train_ids: &[String]) -> Result<BTreeMap<String, UserStats>> {
    if train_ids.is_empty() {
        return Err(DataError::EmptyTrainSplit);
    }
    let mut train: Vec<&PostRecord> = Vec::with_capacity(train_ids.len());
    let mut seen = HashSet::new();
    for id in train_ids {
        let p = dataset
            .get(id)
            .ok_or_else(|| DataError::UnknownId(format!("training id {id} not in dataset")))?;
        if seen.insert(id.as_str()) {
            train.push(p);
        }
    }

    let mut by_user: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut tag_freq: HashMap<&str, usize> = HashMap::new();
    for p in &train {
        by_user.entry(p.user_id.as_str()).or_default().push(p.popularity);
        for t in &p.tag_tokens {
            *tag_freq.entry(t.as_str()).or_default() += 1;
        }
    }
    let all: Vec<f64> = train.iter().map(|p| p.popularity).collect();
    let (global_mean, global_std) = mean_std(&all);

    let users: HashMap<&str, (usize, f64, f64)> = by_user
        .iter()
        .map(|(u, pops)| {
            let (m, s) = mean_std(pops);
            (*u, (pops.len(), m, s))
        })
        .collect();

    let mut out = BTreeMap::new();
    for p in &dataset.posts {
        let (count, mean, std) = users
            .get(p.user_id.as_str())
            .copied()
            .unwrap_or((0, global_mean, global_std));
        let mean_tag_freq = if p.tag_tokens.is_empty() {
            0.0
        } else {
            p.tag_tokens
                .iter()
                .map(|t| tag_freq.get(t.as_str()).copied().unwrap_or(0) as f64)
                .sum::<f64>()
                / p.tag_tokens.len() as f64
        };
        let angle = 2.0 * PI * hour_of_day(p.timestamp) / 24.0;
        out.insert(
            p.post_id.clone(),
            UserStats([
                (1.0 + count as f64).ln(),
                mean,
                std,
                p.tag_tokens.len() as f64,
                p.title_tokens.len() as f64,
                (1.0 + mean_tag_freq).ln(),
                angle.sin(),
                angle.cos(),
            ]),
        );
    }
    Ok(out)
}
