//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod grad_suite;

use std::collections::{BTreeMap, HashMap, HashSet};

use protopop::data::{ClassEntry, ClassTable, Dataset, EmbeddingRecord, EmbeddingTable, PostRecord};
use protopop::encoder::{EncoderProvider, TableEncoder};
use protopop::prototypes::{proportional_quotas, SamplingPlan, Selection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rank by counting: `1 + #smaller + (#equal − 1)/2`.
pub fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let less = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Two-pass Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn brute_spearman(y: &[f64], p: &[f64]) -> f64 {
    pearson(&brute_ranks(y), &brute_ranks(p))
}

/// Random values drawn from a small grid so ties are common.
pub fn tied_values(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> Vec<f64> {
    (0..n)
        .map(|_| f64::from(rng.random_range(0..levels)) * 0.5 - 1.0)
        .collect()
}

/// `k` classes with random sizes, users, timestamps, and subtopics, plus an
/// encoder with random unit-ish embeddings of width `dim`.
pub fn random_classes(seed: u64, k: usize, dim: usize) -> (Dataset, TableEncoder) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<ClassEntry> = (0..k)
        .map(|i| ClassEntry {
            index: i,
            name: format!("c{i:02}"),
            parent2: format!("c{i:02}"),
            parent1: "root".into(),
        })
        .collect();
    let mut posts = Vec::new();
    let mut table = EmbeddingTable::new(dim);
    let vec = |rng: &mut ChaCha8Rng| -> Vec<f32> { (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect() };
    for class in 0..k {
        let n = match rng.random_range(0..4) {
            0 => rng.random_range(1..20),
            1 => rng.random_range(20..300),
            _ => rng.random_range(300..700),
        };
        let users = rng.random_range(1..=40);
        let subtopics = rng.random_range(1..=4);
        let frozen_time = rng.random_bool(0.1);
        for j in 0..n {
            let id = format!("c{class:02}_{j:04}");
            // skewed toward the first few users so caps bind
            let user = ((rng.random::<f64>().powi(3)) * users as f64) as usize;
            let timestamp = if frozen_time {
                1_500_000_000
            } else {
                1_400_000_000 + rng.random_range(0..100_000_000)
            };
            posts.push(PostRecord {
                post_id: id.clone(),
                user_id: format!("u{class}_{user}"),
                title_tokens: vec!["w".into()],
                tag_tokens: vec!["t".into()],
                category_path: [
                    "root".into(),
                    format!("c{class:02}"),
                    format!("s{}", rng.random_range(0..subtopics)),
                ],
                class_index: class,
                timestamp,
                popularity: rng.random_range(0.0..10.0),
                image_ref: String::new(),
            });
            let tokens = vec(&mut rng);
            table
                .insert(
                    id,
                    EmbeddingRecord {
                        image: vec(&mut rng),
                        text_global: vec(&mut rng),
                        text_tokens: tokens,
                    },
                )
                .unwrap();
        }
    }
    let class_tokens: BTreeMap<String, Vec<f32>> = entries.iter().map(|e| (e.name.clone(), vec(&mut rng))).collect();
    let dataset = Dataset::new(posts, ClassTable::new(entries).unwrap()).unwrap();
    let encoder = TableEncoder::new(table, None, class_tokens).unwrap();
    (dataset, encoder)
}

fn bin_of(ts: i64, min: i64, max: i64, bins: usize) -> usize {
    if max == min {
        return 0;
    }
    let frac = (ts - min) as f64 / (max - min) as f64;
    ((frac * bins as f64) as usize).min(bins - 1)
}

/// Size, membership, user-cap, and quota invariants of one class selection.
pub fn check_selection(posts: &[&PostRecord], plan: &SamplingPlan, sel: &Selection) -> Result<(), String> {
    let n = posts.len();
    let target = plan.shots.min(n);
    if sel.ids.len() != target {
        return Err(format!("{} shots for target {target}", sel.ids.len()));
    }
    let by_id: HashMap<&str, &PostRecord> = posts.iter().map(|p| (p.post_id.as_str(), *p)).collect();
    let unique: HashSet<&str> = sel.ids.iter().map(String::as_str).collect();
    if unique.len() != target || !unique.iter().all(|id| by_id.contains_key(id)) {
        return Err("shots must be distinct members of the class".into());
    }

    let cap = plan.effective_user_cap();
    let mut per_user: HashMap<&str, usize> = HashMap::new();
    for id in &sel.ids {
        *per_user.entry(by_id[id.as_str()].user_id.as_str()).or_default() += 1;
    }
    let excess: usize = per_user.values().map(|&c| c.saturating_sub(cap)).sum();
    if excess != sel.relaxation.over_cap {
        return Err(format!(
            "{excess} shots over the cap, {} reported",
            sel.relaxation.over_cap
        ));
    }
    if excess > 0 {
        let starved = posts.iter().any(|p| {
            !unique.contains(p.post_id.as_str()) && per_user.get(p.user_id.as_str()).copied().unwrap_or(0) < cap
        });
        if starved {
            return Err("cap exceeded while an under-cap user had posts left".into());
        }
    }

    let min = posts.iter().map(|p| p.timestamp).min().unwrap();
    let max = posts.iter().map(|p| p.timestamp).max().unwrap();
    let bins = plan.temporal_bins;
    let mut pop = vec![0usize; bins];
    for p in posts {
        pop[bin_of(p.timestamp, min, max, bins)] += 1;
    }
    let quotas = proportional_quotas(&pop, target);
    if quotas.iter().sum::<usize>() != target {
        return Err("quotas do not sum to the target".into());
    }
    for (b, (&q, &p)) in quotas.iter().zip(&pop).enumerate() {
        let exact = target as f64 * p as f64 / n as f64;
        if (q as f64 - exact).abs() >= 1.0 {
            return Err(format!("bin {b}: quota {q} vs proportional share {exact}"));
        }
        if sel.bins[b].population != p || sel.bins[b].quota != q {
            return Err(format!("bin {b}: report disagrees with recount"));
        }
    }
    let mut got = vec![0usize; bins];
    for id in &sel.ids {
        got[bin_of(by_id[id.as_str()].timestamp, min, max, bins)] += 1;
    }
    let surplus: usize = got.iter().zip(&quotas).map(|(g, q)| g.saturating_sub(*q)).sum();
    if surplus > sel.relaxation.borrowed + sel.relaxation.over_cap {
        return Err(format!(
            "{surplus} shots beyond quotas but only {:?} relaxed",
            sel.relaxation
        ));
    }
    if !sel.relaxation.any() && got != quotas {
        return Err(format!("no relaxation yet bins {got:?} differ from quotas {quotas:?}"));
    }
    Ok(())
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Support-function test: along random directions the prototype never
/// exceeds the farthest normalized shot.
pub fn check_hull(proto: &[f64], shots: &[String], encoder: &TableEncoder, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let vecs: Vec<Vec<f64>> = shots
        .iter()
        .map(|id| unit(&encoder.encode_image(id).unwrap()))
        .collect();
    for _ in 0..64 {
        let u: Vec<f64> = (0..proto.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dot = |v: &[f64]| v.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
        let hi = vecs.iter().map(|v| dot(v)).fold(f64::NEG_INFINITY, f64::max);
        let lo = vecs.iter().map(|v| dot(v)).fold(f64::INFINITY, f64::min);
        let p = dot(proto);
        // prototypes are stored at f32 precision
        if p > hi + 1e-6 || p < lo - 1e-6 {
            return Err(format!("projection {p} outside [{lo}, {hi}]"));
        }
    }
    Ok(())
}
