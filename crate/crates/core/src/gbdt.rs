//! Squared-loss gradient-boosted regression trees with exact split search,
//! tail oversampling, and validation-tuned fusion of two forests.
//!
//! Each round fits a tree to the current residuals. Splits are found by an
//! exact scan over presorted feature columns; the best split maximizes the
//! SSE reduction `S_L²/n_L + S_R²/n_R − S²/n`, with ties resolved by the
//! smaller feature index, then the smaller threshold. A sample goes left when
//! its value is `≤` the threshold. Leaves hold mean residuals, and a forest
//! predicts `base + η · Σ leaf`.
//!
//! ```
//! use protopop::gbdt::{fit_gbdt, GbdtConfig};
//! use protopop::tensor::Tensor;
//!
//! let x = Tensor::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap();
//! let y = [1.0, 1.0, 5.0, 5.0];
//! let config = GbdtConfig { rounds: 1, max_depth: 1, min_leaf: 1, learning_rate: 1.0, ..GbdtConfig::config_a() };
//! let forest = fit_gbdt(&x, &y, &config).unwrap();
//! assert_eq!(forest.predict(&x).unwrap(), vec![1.0, 1.0, 5.0, 5.0]);
//! ```

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::metrics::{mae, spearman};
use crate::tensor::Tensor;

/// Nodes at least this large search features in parallel.
const PARALLEL_NODE: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub learning_rate: f64,
    /// Fraction of features offered to each tree.
    pub feature_subsample: f64,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self::config_a()
    }
}

impl GbdtConfig {
    /// Deep, shorter ensemble.
    pub fn config_a() -> Self {
        Self {
            rounds: 300,
            max_depth: 6,
            min_leaf: 10,
            learning_rate: 0.05,
            feature_subsample: 0.8,
            seed: 11,
        }
    }

    /// Shallow, longer ensemble on fewer features.
    pub fn config_b() -> Self {
        Self {
            rounds: 500,
            max_depth: 4,
            min_leaf: 10,
            learning_rate: 0.05,
            feature_subsample: 0.6,
            seed: 23,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.min_leaf == 0 {
            return Err(Error::invalid("min_leaf must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::invalid(format!(
                "learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if !(self.feature_subsample > 0.0 && self.feature_subsample <= 1.0) {
            return Err(Error::invalid(format!(
                "feature_subsample must lie in (0, 1], got {}",
                self.feature_subsample
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Nodes in preorder; index 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub config: GbdtConfig,
    pub base_score: f64,
    pub num_features: usize,
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    /// Members going left.
    n_left: usize,
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    a.gain > b.gain
        || (a.gain == b.gain && (a.feature < b.feature || (a.feature == b.feature && a.threshold < b.threshold)))
}

fn best_on_feature(
    feature: usize,
    sorted: &[u32],
    column: &[f64],
    resid: &[f64],
    total: f64,
    min_leaf: usize,
) -> Option<Candidate> {
    let n = sorted.len();
    let base = total * total / n as f64;
    let mut left = 0.0;
    let mut best: Option<Candidate> = None;
    for pos in 0..n - 1 {
        left += resid[sorted[pos] as usize];
        let nl = pos + 1;
        if nl < min_leaf || n - nl < min_leaf {
            continue;
        }
        let (a, b) = (column[sorted[pos] as usize], column[sorted[pos + 1] as usize]);
        if a == b {
            continue;
        }
        let right = total - left;
        let gain = left * left / nl as f64 + right * right / (n - nl) as f64 - base;
        let mid = a + (b - a) / 2.0;
        let threshold = if mid < b { mid } else { a };
        let c = Candidate {
            gain,
            feature,
            threshold,
            n_left: nl,
        };
        if best.as_ref().is_none_or(|cur| better(&c, cur)) {
            best = Some(c);
        }
    }
    best
}

struct Builder<'a> {
    columns: &'a [Vec<f64>],
    resid: &'a [f64],
    config: &'a GbdtConfig,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    /// `lists[j]` holds the node's members sorted by feature `features[j]`.
    fn grow(&mut self, features: &[usize], lists: Vec<Vec<u32>>, depth: usize) -> usize {
        let members = &lists[0];
        let n = members.len();
        let total: f64 = members.iter().map(|&i| self.resid[i as usize]).sum();
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            value: total / n as f64,
        });
        if depth >= self.config.max_depth || n < 2 * self.config.min_leaf {
            return id;
        }
        let scale: f64 = members.iter().map(|&i| self.resid[i as usize].powi(2)).sum();
        let search = |j: usize| {
            best_on_feature(
                features[j],
                &lists[j],
                &self.columns[features[j]],
                self.resid,
                total,
                self.config.min_leaf,
            )
        };
        let found: Vec<Option<Candidate>> = if n >= PARALLEL_NODE {
            (0..features.len()).into_par_iter().map(search).collect()
        } else {
            (0..features.len()).map(search).collect()
        };
        let best = found
            .into_iter()
            .flatten()
            .reduce(|a, b| if better(&b, &a) { b } else { a });
        let Some(best) = best else { return id };
        // gains below rounding noise would split on numerical artifacts
        if !(best.gain > 1e-12 * scale) {
            return id;
        }
        let column = &self.columns[best.feature];
        let mut left_lists = Vec::with_capacity(lists.len());
        let mut right_lists = Vec::with_capacity(lists.len());
        for list in lists {
            let (l, r): (Vec<u32>, Vec<u32>) = list.into_iter().partition(|&i| column[i as usize] <= best.threshold);
            left_lists.push(l);
            right_lists.push(r);
        }
        debug_assert_eq!(left_lists[0].len(), best.n_left);
        let left = self.grow(features, left_lists, depth + 1);
        let right = self.grow(features, right_lists, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }
}

fn check_matrix(features: &Tensor, n_labels: usize) -> Result<()> {
    if features.rows() != n_labels {
        return Err(Error::invalid(format!(
            "{} feature rows for {} labels",
            features.rows(),
            n_labels
        )));
    }
    if features.cols() == 0 {
        return Err(Error::invalid("no feature columns"));
    }
    features.check_finite("gbdt features")?;
    Ok(())
}

/// Fits a forest and returns it with the training MSE after each round
/// (entry 0 is the MSE of the base score alone).
pub fn fit_gbdt_traced(features: &Tensor, labels: &[f64], config: &GbdtConfig) -> Result<(Forest, Vec<f64>)> {
    config.validate()?;
    check_matrix(features, labels.len())?;
    let n = labels.len();
    if n < 2 * config.min_leaf {
        return Err(Error::invalid(format!(
            "{n} samples cannot fill two leaves of {} samples",
            config.min_leaf
        )));
    }
    if let Some(v) = labels.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite label {v}")));
    }
    let f = features.cols();
    let columns: Vec<Vec<f64>> = (0..f).map(|c| (0..n).map(|r| features.get(r, c)).collect()).collect();
    let presorted: Vec<Vec<u32>> = columns
        .par_iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            idx
        })
        .collect();
    let base_score = labels.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base_score; n];
    let mse = |pred: &[f64]| labels.iter().zip(pred).map(|(y, p)| (y - p).powi(2)).sum::<f64>() / n as f64;
    let mut history = vec![mse(&pred)];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let take = ((config.feature_subsample * f as f64).ceil() as usize).clamp(1, f);
    let mut all: Vec<usize> = (0..f).collect();
    let mut trees = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        all.shuffle(&mut rng);
        let mut chosen = all[..take].to_vec();
        chosen.sort_unstable();
        let resid: Vec<f64> = labels.iter().zip(&pred).map(|(y, p)| y - p).collect();
        let lists: Vec<Vec<u32>> = chosen.iter().map(|&c| presorted[c].clone()).collect();
        let mut b = Builder {
            columns: &columns,
            resid: &resid,
            config,
            nodes: Vec::new(),
        };
        b.grow(&chosen, lists, 0);
        let tree = Tree { nodes: b.nodes };
        for (r, p) in pred.iter_mut().enumerate() {
            *p += config.learning_rate * tree_value(&tree, &columns, r);
        }
        history.push(mse(&pred));
        trees.push(tree);
    }
    Ok((
        Forest {
            config: config.clone(),
            base_score,
            num_features: f,
            trees,
        },
        history,
    ))
}

fn tree_value(tree: &Tree, columns: &[Vec<f64>], r: usize) -> f64 {
    let mut i = 0;
    loop {
        match tree.nodes[i] {
            TreeNode::Leaf { value } => return value,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => i = if columns[feature][r] <= threshold { left } else { right },
        }
    }
}

pub fn fit_gbdt(features: &Tensor, labels: &[f64], config: &GbdtConfig) -> Result<Forest> {
    Ok(fit_gbdt_traced(features, labels, config)?.0)
}

impl Forest {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        self.base_score + self.config.learning_rate * sum
    }

    pub fn predict(&self, features: &Tensor) -> Result<Vec<f64>> {
        if features.cols() != self.num_features {
            return Err(Error::invalid(format!(
                "forest expects {} features, got {}",
                self.num_features,
                features.cols()
            )));
        }
        features.check_finite("gbdt features")?;
        Ok((0..features.rows())
            .into_par_iter()
            .map(|r| self.predict_row(features.row_slice(r)))
            .collect())
    }

    /// Sections `{prefix}.config`, `{prefix}.meta`, `{prefix}.offsets`, `{prefix}.nodes`.
    /// Each node row is `[feature, threshold, left, right]`; leaves store
    /// feature `-1` and their value in the threshold slot.
    pub fn put_sections(&self, c: &mut Checkpoint, prefix: &str) {
        c.put_text(
            &format!("{prefix}.config"),
            serde_json::to_string_pretty(&self.config).expect("config serializes"),
        );
        c.put_tensor(
            &format!("{prefix}.meta"),
            &Tensor::row(&[self.base_score, self.num_features as f64]).expect("finite"),
        );
        let offsets: Vec<f64> = self
            .trees
            .iter()
            .scan(0usize, |acc, t| {
                let start = *acc;
                *acc += t.nodes.len();
                Some(start as f64)
            })
            .collect();
        c.put_tensor(
            &format!("{prefix}.offsets"),
            &Tensor::new(1, offsets.len(), offsets).expect("finite"),
        );
        let mut data = Vec::new();
        for t in &self.trees {
            for node in &t.nodes {
                match *node {
                    TreeNode::Leaf { value } => data.extend([-1.0, value, 0.0, 0.0]),
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => data.extend([feature as f64, threshold, left as f64, right as f64]),
                }
            }
        }
        c.put_tensor(
            &format!("{prefix}.nodes"),
            &Tensor::new(data.len() / 4, 4, data).expect("finite"),
        );
    }

    pub fn from_sections(c: &Checkpoint, prefix: &str) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(format!("{prefix}: {m}"));
        let config: GbdtConfig =
            serde_json::from_str(c.text(&format!("{prefix}.config"))?).map_err(|e| bad(e.to_string()))?;
        let meta = c.tensor_shaped(&format!("{prefix}.meta"), [1, 2])?;
        let offsets = c.tensor(&format!("{prefix}.offsets"))?;
        let nodes = c.tensor(&format!("{prefix}.nodes"))?;
        if nodes.cols() != 4 && nodes.rows() > 0 {
            return Err(bad("node table must have 4 columns".into()));
        }
        let num_features = meta.get(0, 1) as usize;
        let starts: Vec<usize> = offsets.data().iter().map(|&v| v as usize).collect();
        let mut trees = Vec::with_capacity(starts.len());
        for (t, &start) in starts.iter().enumerate() {
            let end = starts.get(t + 1).copied().unwrap_or(nodes.rows());
            if start >= end || end > nodes.rows() {
                return Err(bad(format!("tree {t} has an invalid node range")));
            }
            let len = end - start;
            let mut out = Vec::with_capacity(len);
            for r in start..end {
                let row = nodes.row_slice(r);
                if row[0] < 0.0 {
                    out.push(TreeNode::Leaf { value: row[1] });
                } else {
                    let (feature, left, right) = (row[0] as usize, row[2] as usize, row[3] as usize);
                    if feature >= num_features || left >= len || right >= len || left <= r - start || right <= r - start
                    {
                        return Err(bad(format!("tree {t} has a malformed split")));
                    }
                    out.push(TreeNode::Split {
                        feature,
                        threshold: row[1],
                        left,
                        right,
                    });
                }
            }
            trees.push(Tree { nodes: out });
        }
        Ok(Self {
            config,
            base_score: meta.get(0, 0),
            num_features,
            trees,
        })
    }
}

/// Indices `0..n`, followed by `factor − 1` extra copies of every index whose
/// label exceeds `threshold`, in index order.
pub fn oversample_tail(labels: &[f64], threshold: f64, factor: usize) -> Result<Vec<usize>> {
    if factor == 0 {
        return Err(Error::invalid("oversampling factor must be at least 1"));
    }
    let mut out: Vec<usize> = (0..labels.len()).collect();
    let tail: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] > threshold).collect();
    for _ in 1..factor {
        out.extend(&tail);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    /// Weight of forest A; B gets `1 − w`.
    pub w: f64,
    pub src: f64,
    pub mae: f64,
}

impl FusionWeights {
    pub fn blend(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        blend(self.w, a, b)
    }
}

fn blend(w: f64, a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| w * x + (1.0 - w) * y).collect()
}

/// Grid points `0, 0.05, …, 1`.
pub fn fusion_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// Grid search for the blend weight with the highest validation SRC; ties
/// (within `1e-12`) go to the lower MAE, then the smaller weight.
pub fn fuse_predictions(pred_a: &[f64], pred_b: &[f64], labels: &[f64]) -> Result<FusionWeights> {
    if pred_a.len() != labels.len() || pred_b.len() != labels.len() {
        return Err(Error::invalid(format!(
            "prediction lengths {} and {} for {} labels",
            pred_a.len(),
            pred_b.len(),
            labels.len()
        )));
    }
    const TIE: f64 = 1e-12;
    let mut best: Option<FusionWeights> = None;
    for w in fusion_grid() {
        let fused = blend(w, pred_a, pred_b);
        let cand = FusionWeights {
            w,
            src: spearman(labels, &fused)?,
            mae: mae(labels, &fused)?,
        };
        let replace = match &best {
            None => true,
            Some(b) => cand.src > b.src + TIE || ((cand.src - b.src).abs() <= TIE && cand.mae < b.mae - TIE),
        };
        if replace {
            best = Some(cand);
        }
    }
    best.ok_or_else(|| Error::invalid("empty fusion grid"))
}

/// Two forests and their blend.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub a: Forest,
    pub b: Forest,
    pub fusion: FusionWeights,
    pub columns: Vec<String>,
}

impl Regressor {
    pub fn predict(&self, features: &Tensor) -> Result<Vec<f64>> {
        Ok(self
            .fusion
            .blend(&self.a.predict(features)?, &self.b.predict(features)?))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.put_text(
            "columns",
            serde_json::to_string(&self.columns).expect("columns serialize"),
        );
        c.put_text(
            "fusion",
            serde_json::to_string_pretty(&self.fusion).expect("weights serialize"),
        );
        self.a.put_sections(&mut c, "forest_a");
        self.b.put_sections(&mut c, "forest_b");
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::Checkpoint(e.to_string());
        let out = Self {
            a: Forest::from_sections(c, "forest_a")?,
            b: Forest::from_sections(c, "forest_b")?,
            fusion: serde_json::from_str(c.text("fusion")?).map_err(bad)?,
            columns: serde_json::from_str(c.text("columns")?).map_err(bad)?,
        };
        if out.a.num_features != out.columns.len() || out.b.num_features != out.columns.len() {
            return Err(Error::Checkpoint("forest widths disagree with column list".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cfg(rounds: usize, depth: usize, lr: f64) -> GbdtConfig {
        GbdtConfig {
            rounds,
            max_depth: depth,
            min_leaf: 1,
            learning_rate: lr,
            feature_subsample: 1.0,
            seed: 0,
        }
    }

    fn linear_data(n: usize, seed: u64) -> (Tensor, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            rows.push([a, b]);
            y.push(a + 2.0 * b);
        }
        (Tensor::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn constant_labels() {
        let (x, _) = linear_data(50, 1);
        let y = vec![3.5; 50];
        let (f, hist) = fit_gbdt_traced(&x, &y, &cfg(5, 3, 0.5)).unwrap();
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
        assert!(f.predict(&x).unwrap().iter().all(|&p| p == 3.5));
        assert_eq!(*hist.last().unwrap(), 0.0);
    }

    #[test]
    fn step_function_recovered() {
        let x = Tensor::from_rows(&[[0.1], [0.4], [0.2], [0.9], [0.7], [0.6]]).unwrap();
        let y = [0.0, 0.0, 0.0, 2.0, 2.0, 2.0];
        let f = fit_gbdt(&x, &y, &cfg(1, 1, 1.0)).unwrap();
        assert_eq!(f.predict(&x).unwrap(), y.to_vec());
        match f.trees[0].nodes[0] {
            TreeNode::Split { threshold, .. } => assert!((threshold - 0.5).abs() < 1e-12),
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn linear_target_fits_and_mse_is_monotone() {
        let (x, y) = linear_data(400, 0);
        let (_, hist) = fit_gbdt_traced(&x, &y, &cfg(300, 3, 0.1)).unwrap();
        assert!(*hist.last().unwrap() < 1e-3, "{}", hist.last().unwrap());
        for w in hist.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn empty_forest_and_single_leaf() {
        let (x, y) = linear_data(20, 2);
        let f = fit_gbdt(&x, &y, &cfg(0, 3, 0.1)).unwrap();
        let base = y.iter().sum::<f64>() / 20.0;
        assert!(f.predict(&x).unwrap().iter().all(|&p| p == base));
        let g = Forest {
            trees: vec![Tree {
                nodes: vec![TreeNode::Leaf { value: 2.0 }],
            }],
            config: cfg(1, 1, 1.0),
            ..f
        };
        assert_eq!(g.predict_row(&[0.0, 0.0]), base + 2.0);
        assert!(g.predict(&Tensor::zeros(1, 3)).is_err());
    }

    #[test]
    fn deterministic_and_checkpointed() {
        let (x, y) = linear_data(300, 3);
        let c = GbdtConfig {
            rounds: 20,
            ..GbdtConfig::config_b()
        };
        let a = fit_gbdt(&x, &y, &c).unwrap();
        assert_eq!(a, fit_gbdt(&x, &y, &c).unwrap());
        let mut ck = Checkpoint::new();
        a.put_sections(&mut ck, "f");
        let back = Forest::from_sections(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), "f").unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (x, y) = linear_data(5, 4);
        assert!(fit_gbdt(&x, &y, &GbdtConfig::config_a()).is_err());
        assert!(fit_gbdt(&x, &y[..4], &cfg(1, 1, 1.0)).is_err());
        let bad = GbdtConfig {
            learning_rate: 0.0,
            ..cfg(1, 1, 1.0)
        };
        assert!(fit_gbdt(&x, &y, &bad).is_err());
    }

    #[test]
    fn oversampling_examples() {
        assert_eq!(
            oversample_tail(&[5.0, 13.0, 12.5], 12.0, 2).unwrap(),
            vec![0, 1, 2, 1, 2]
        );
        assert_eq!(oversample_tail(&[5.0, 13.0], 12.0, 1).unwrap(), vec![0, 1]);
        assert_eq!(oversample_tail(&[5.0, 13.0], 20.0, 3).unwrap(), vec![0, 1]);
        assert!(oversample_tail(&[1.0], 0.0, 0).is_err());
    }

    #[test]
    fn fusion_examples() {
        let y: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let noisy: Vec<f64> = y
            .iter()
            .enumerate()
            .map(|(i, v)| v + ((i * 7) % 5) as f64 * 0.3)
            .collect();
        assert_eq!(fuse_predictions(&y, &noisy, &y).unwrap().w, 1.0);
        assert_eq!(fuse_predictions(&noisy, &noisy, &y).unwrap().w, 0.0);
        assert!(fuse_predictions(&y, &y[..3], &y).is_err());
    }
}
