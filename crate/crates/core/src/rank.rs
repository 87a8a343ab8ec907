//! Choosing a pre-trained embedding model for a new target.
//!
//! Every (target, source) pair is described by the absolute difference of the
//! two datasets' meta-feature vectors. A small LambdaMART ranker (boosted
//! depth-limited regression trees fitted to NDCG-weighted pairwise lambdas)
//! learns to order sources by how well their PTEM served each target.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::Objective;
use crate::driver::{self, Arm, RunConfig};
use crate::embed::PtemBundle;
use crate::error::{Error, Result};
use crate::space::SearchSpace;

/// Number of entries in every meta-feature vector.
pub const META_LEN: usize = 12;
/// Trailing slots reserved for synthetic task descriptors.
pub const DESCRIPTOR_SLOTS: usize = 4;

/// Summary statistics of a tabular classification dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_samples: usize,
    pub n_features: usize,
    pub class_counts: Vec<usize>,
    pub fraction_categorical: f64,
    pub fraction_missing: f64,
    /// Per-feature `(mean - median) / std`, a cheap skewness proxy.
    pub skewness: Vec<f64>,
}

impl DatasetStats {
    /// Computes statistics from a column-major feature table (`None` marks a
    /// missing cell) and integer class labels.
    pub fn compute(columns: &[Vec<Option<f64>>], categorical: &[bool], labels: &[usize]) -> Self {
        let n_samples = labels.len();
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut class_counts = vec![0; n_classes];
        for &l in labels {
            class_counts[l] += 1;
        }
        let cells = columns.iter().map(Vec::len).sum::<usize>();
        let missing = columns.iter().flatten().filter(|c| c.is_none()).count();
        let skewness = columns
            .iter()
            .zip(categorical.iter().chain(std::iter::repeat(&false)))
            .filter(|(_, &cat)| !cat)
            .map(|(col, _)| {
                let mut v: Vec<f64> = col.iter().flatten().copied().filter(|x| x.is_finite()).collect();
                if v.len() < 2 {
                    return 0.0;
                }
                v.sort_by(f64::total_cmp);
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                let mid = v.len() / 2;
                let median = if v.len() % 2 == 0 { 0.5 * (v[mid - 1] + v[mid]) } else { v[mid] };
                if sd > 0.0 {
                    (mean - median) / sd
                } else {
                    0.0
                }
            })
            .collect();
        DatasetStats {
            n_samples,
            n_features: columns.len(),
            class_counts,
            fraction_categorical: if categorical.is_empty() {
                0.0
            } else {
                categorical.iter().filter(|&&c| c).count() as f64 / categorical.len() as f64
            },
            fraction_missing: if cells == 0 { 0.0 } else { missing as f64 / cells as f64 },
            skewness,
        }
    }
}

/// Fixed-length dataset description. Layout: log sample count, log feature
/// count, class count, class entropy, categorical fraction, missing fraction,
/// mean and std of the skewness proxy, then four descriptor slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaFeatureVector(pub Vec<f64>);

impl MetaFeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != META_LEN {
            return Err(Error::Shape {
                expected: META_LEN,
                got: values.len(),
            });
        }
        // Missing statistics are imputed as zero.
        Ok(MetaFeatureVector(values.into_iter().map(|v| if v.is_finite() { v } else { 0.0 }).collect()))
    }

    pub fn from_stats(stats: &DatasetStats, extras: &[f64]) -> Self {
        let total: usize = stats.class_counts.iter().sum();
        let entropy = if total == 0 {
            0.0
        } else {
            stats
                .class_counts
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / total as f64;
                    -p * p.ln()
                })
                .sum()
        };
        let (skew_mean, skew_std) = mean_std(&stats.skewness);
        let mut v = vec![
            (stats.n_samples as f64).max(1.0).ln(),
            (stats.n_features as f64).max(1.0).ln(),
            stats.class_counts.len() as f64,
            entropy,
            stats.fraction_categorical,
            stats.fraction_missing,
            skew_mean,
            skew_std,
        ];
        v.extend((0..DESCRIPTOR_SLOTS).map(|i| extras.get(i).copied().unwrap_or(0.0)));
        MetaFeatureVector::new(v).expect("layout has META_LEN entries")
    }

    /// Meta-features of a synthetic suite: dataset statistics are left at
    /// zero and the descriptor fills the trailing slots.
    pub fn from_descriptor(descriptor: &[f64]) -> Self {
        let mut v = vec![0.0; META_LEN - DESCRIPTOR_SLOTS];
        v.extend((0..DESCRIPTOR_SLOTS).map(|i| descriptor.get(i).copied().unwrap_or(0.0)));
        MetaFeatureVector::new(v).expect("layout has META_LEN entries")
    }

    /// Ranker input for a (target, source) pair.
    pub fn abs_diff(&self, other: &MetaFeatureVector) -> Vec<f64> {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).collect()
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}

/// Mean best-so-far value over all seeds, sampled every `T/10` iterations.
/// `traces[s][t - 1]` is seed `s`'s best value after iteration `t`.
pub fn score_tau(traces: &[Vec<f64>]) -> Result<f64> {
    let t = traces.first().map_or(0, Vec::len);
    if t == 0 || traces.iter().any(|tr| tr.len() != t) {
        return Err(Error::config("score needs equally long, nonempty best-so-far traces"));
    }
    if traces.iter().any(|tr| tr.windows(2).any(|w| w[1] < w[0])) {
        return Err(Error::config("best-so-far traces must be nondecreasing"));
    }
    let step = (t / 10).max(1);
    let grid: Vec<usize> = (1..=t / step).map(|i| i * step - 1).collect();
    let sum: f64 = traces.iter().flat_map(|tr| grid.iter().map(move |&i| tr[i])).sum();
    Ok(sum / (traces.len() * grid.len()) as f64)
}

/// Indices sorted by descending value; equal values keep index order.
fn order_desc(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// NDCG@k of ordering items by `predicted` when `truth` holds their true
/// scores. An item with true rank `x` has relevance `(k - x + 1)^2` inside the
/// top `k`, zero otherwise.
pub fn ndcg_at_k(truth: &[f64], predicted: &[f64], k: usize) -> f64 {
    assert_eq!(truth.len(), predicted.len(), "score lists differ in length");
    assert!(k >= 1 && k <= truth.len(), "k must lie in 1..=len");
    let mut rel = vec![0.0; truth.len()];
    for (x, &i) in order_desc(truth).iter().enumerate().take(k) {
        rel[i] = ((k - x) as f64).powi(2);
    }
    let dcg: f64 = order_desc(predicted)
        .iter()
        .take(k)
        .enumerate()
        .map(|(r, &i)| rel[i] / (r as f64 + 2.0).log2())
        .sum();
    let ideal: f64 = (0..k).map(|r| ((k - r) as f64).powi(2) / (r as f64 + 2.0).log2()).sum();
    dcg / ideal
}

/// One (target, source) row of the ranking training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub target: String,
    pub source: String,
    pub score: f64,
    pub features: Vec<f64>,
}

/// Rows grouped by target; order is preserved as inserted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankingDataset {
    pub rows: Vec<RankRow>,
}

impl RankingDataset {
    /// Row indices per target, in first-appearance order.
    pub fn groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut order: Vec<String> = Vec::new();
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            if !map.contains_key(r.target.as_str()) {
                order.push(r.target.clone());
            }
            map.entry(&r.target).or_default().push(i);
        }
        order
            .into_iter()
            .map(|t| {
                let idx = map[t.as_str()].clone();
                (t, idx)
            })
            .collect()
    }

    pub fn feature_len(&self) -> Option<usize> {
        self.rows.first().map(|r| r.features.len())
    }

    pub fn check(&self) -> Result<()> {
        let len = self.feature_len().unwrap_or(0);
        for r in &self.rows {
            if r.target == r.source {
                return Err(Error::config(format!("row pairs `{}` with itself", r.target)));
            }
            if r.features.len() != len {
                return Err(Error::Shape {
                    expected: len,
                    got: r.features.len(),
                });
            }
        }
        Ok(())
    }

    /// Dataset without the rows of one target.
    pub fn without_group(&self, target: &str) -> RankingDataset {
        RankingDataset {
            rows: self.rows.iter().filter(|r| r.target != target).cloned().collect(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let corrupt = |e: csv::Error| Error::Corrupt(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(corrupt)?;
        let mut header = vec!["target".to_string(), "source".into(), "score".into()];
        header.extend((0..self.feature_len().unwrap_or(0)).map(|i| format!("f{i}")));
        w.write_record(&header).map_err(corrupt)?;
        for r in &self.rows {
            let mut rec = vec![r.target.clone(), r.source.clone(), format!("{:?}", r.score)];
            rec.extend(r.features.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(corrupt)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let corrupt = |e: csv::Error| Error::Corrupt(format!("{}: {e}", path.display()));
        let mut r = csv::Reader::from_path(path).map_err(corrupt)?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(corrupt)?;
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Corrupt(format!("{}: bad number `{s}`", path.display())))
            };
            if rec.len() < 3 {
                return Err(Error::Corrupt(format!("{}: short row", path.display())));
            }
            rows.push(RankRow {
                target: rec[0].to_string(),
                source: rec[1].to_string(),
                score: num(&rec[2])?,
                features: rec.iter().skip(3).map(num).collect::<Result<_>>()?,
            });
        }
        let ds = RankingDataset { rows };
        ds.check()?;
        Ok(ds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankerConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Fraction of groups used per boosting round.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            subsample: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// A regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

pub const RANKER_FORMAT: &str = "latentcash-ranker";
pub const RANKER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerModel {
    pub format: String,
    pub version: u32,
    pub feature_len: usize,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl RankerModel {
    pub fn constant(feature_len: usize, learning_rate: f64) -> Self {
        RankerModel {
            format: RANKER_FORMAT.into(),
            version: RANKER_VERSION,
            feature_len,
            learning_rate,
            trees: Vec::new(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ranker serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Corrupt(e.to_string()))?;
        if v.get("format").and_then(|f| f.as_str()) != Some(RANKER_FORMAT) {
            return Err(Error::Corrupt("not a ranker model file".into()));
        }
        let found = v.get("version").and_then(|f| f.as_u64()).unwrap_or(0) as u32;
        if found != RANKER_VERSION {
            return Err(Error::Version {
                found,
                supported: RANKER_VERSION,
            });
        }
        serde_json::from_value(v).map_err(|e| Error::Corrupt(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Training labels for one group: `(n - r + 1)^2` for true rank `r`.
pub fn rank_labels(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let mut labels = vec![0.0; n];
    for (r, &i) in order_desc(scores).iter().enumerate() {
        labels[i] = ((n - r) as f64).powi(2);
    }
    labels
}

/// LambdaRank gradients for one group. `lambdas[i] > 0` asks for a higher
/// prediction of item `i`; `weights` are the matching second-order terms.
pub fn lambda_gradients(labels: &[f64], preds: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = labels.len();
    let mut lambdas = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let ideal: f64 = {
        let mut l = labels.to_vec();
        l.sort_by(|a, b| b.total_cmp(a));
        l.iter().enumerate().map(|(r, g)| g / (r as f64 + 2.0).log2()).sum()
    };
    if ideal <= 0.0 {
        return (lambdas, weights);
    }
    let mut pos = vec![0; n];
    for (r, &i) in order_desc(preds).iter().enumerate() {
        pos[i] = r;
    }
    let disc = |r: usize| 1.0 / (r as f64 + 2.0).log2();
    for i in 0..n {
        for j in 0..n {
            if labels[i] <= labels[j] {
                continue;
            }
            let delta = ((labels[i] - labels[j]) * (disc(pos[i]) - disc(pos[j]))).abs() / ideal;
            let rho = 1.0 / (1.0 + (preds[i] - preds[j]).exp());
            lambdas[i] += rho * delta;
            lambdas[j] -= rho * delta;
            let w = rho * (1.0 - rho) * delta;
            weights[i] += w;
            weights[j] += w;
        }
    }
    (lambdas, weights)
}

fn fit_tree(xs: &[&[f64]], grad: &[f64], hess: &[f64], rows: &[usize], max_depth: usize) -> Tree {
    let mut tree = Tree { nodes: Vec::new() };
    grow(&mut tree, xs, grad, hess, rows.to_vec(), max_depth);
    tree
}

fn grow(tree: &mut Tree, xs: &[&[f64]], grad: &[f64], hess: &[f64], rows: Vec<usize>, depth: usize) -> usize {
    let id = tree.nodes.len();
    let g: f64 = rows.iter().map(|&i| grad[i]).sum();
    let h: f64 = rows.iter().map(|&i| hess[i]).sum();
    let leaf = if h > 1e-12 { g / h } else { 0.0 };
    tree.nodes.push(Node::Leaf { value: leaf });
    if depth == 0 || rows.len() < 2 {
        return id;
    }
    // Least-squares split on the lambdas.
    let n = rows.len() as f64;
    let base = g * g / n;
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..xs[rows[0]].len() {
        let mut sorted = rows.clone();
        sorted.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]).then(a.cmp(&b)));
        let mut left = 0.0;
        for k in 0..sorted.len() - 1 {
            left += grad[sorted[k]];
            let (a, b) = (xs[sorted[k]][f], xs[sorted[k + 1]][f]);
            if a == b {
                continue;
            }
            let nl = (k + 1) as f64;
            let right = g - left;
            let gain = left * left / nl + right * right / (n - nl) - base;
            if gain > 1e-12 && best.is_none_or(|(bg, _, _)| gain > bg) {
                best = Some((gain, f, 0.5 * (a + b)));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        return id;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| xs[i][feature] <= threshold);
    let left = grow(tree, xs, grad, hess, l, depth - 1);
    let right = grow(tree, xs, grad, hess, r, depth - 1);
    tree.nodes[id] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    id
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankerReport {
    /// Mean training NDCG@3 (or group size, if smaller) after each round.
    pub train_ndcg: Vec<f64>,
    pub skipped_groups: Vec<String>,
}

fn mean_group_ndcg(ds: &RankingDataset, groups: &[(String, Vec<usize>)], preds: &[f64]) -> f64 {
    let vals: Vec<f64> = groups
        .iter()
        .map(|(_, idx)| {
            let truth: Vec<f64> = idx.iter().map(|&i| ds.rows[i].score).collect();
            let p: Vec<f64> = idx.iter().map(|&i| preds[i]).collect();
            ndcg_at_k(&truth, &p, 3.min(idx.len()))
        })
        .collect();
    vals.iter().sum::<f64>() / vals.len().max(1) as f64
}

pub fn train_ranker(ds: &RankingDataset, cfg: &RankerConfig) -> Result<(RankerModel, RankerReport)> {
    ds.check()?;
    let feature_len = ds.feature_len().unwrap_or(0);
    let mut skipped = Vec::new();
    let groups: Vec<(String, Vec<usize>)> = ds
        .groups()
        .into_iter()
        .filter(|(t, idx)| {
            let first = ds.rows[idx[0]].score;
            let ok = idx.len() >= 2 && idx.iter().any(|&i| ds.rows[i].score != first);
            if !ok {
                warn!("skipping degenerate ranking group `{t}`");
                skipped.push(t.clone());
            }
            ok
        })
        .collect();
    if groups.len() < 2 {
        return Err(Error::config("ranker training needs at least two usable groups"));
    }
    let labels: Vec<Vec<f64>> = groups
        .iter()
        .map(|(_, idx)| rank_labels(&idx.iter().map(|&i| ds.rows[i].score).collect::<Vec<_>>()))
        .collect();
    let xs: Vec<&[f64]> = ds.rows.iter().map(|r| r.features.as_slice()).collect();
    let mut model = RankerModel::constant(feature_len, cfg.learning_rate);
    let mut preds = vec![0.0; ds.rows.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train_ndcg = Vec::with_capacity(cfg.trees);
    for _ in 0..cfg.trees {
        let mut grad = vec![0.0; ds.rows.len()];
        let mut hess = vec![0.0; ds.rows.len()];
        let mut rows = Vec::new();
        for (gi, (_, idx)) in groups.iter().enumerate() {
            if cfg.subsample < 1.0 && rng.random::<f64>() >= cfg.subsample {
                continue;
            }
            let p: Vec<f64> = idx.iter().map(|&i| preds[i]).collect();
            let (l, w) = lambda_gradients(&labels[gi], &p);
            for (k, &i) in idx.iter().enumerate() {
                grad[i] = l[k];
                hess[i] = w[k];
                rows.push(i);
            }
        }
        if rows.is_empty() {
            continue;
        }
        let tree = fit_tree(&xs, &grad, &hess, &rows, cfg.max_depth);
        for (i, x) in xs.iter().enumerate() {
            preds[i] += cfg.learning_rate * tree.predict(x);
        }
        model.trees.push(tree);
        train_ndcg.push(mean_group_ndcg(ds, &groups, &preds));
    }
    Ok((
        model,
        RankerReport {
            train_ndcg,
            skipped_groups: skipped,
        },
    ))
}

/// NDCG@k on each held-out group when training on all the others.
pub fn leave_one_group_out_ndcg(ds: &RankingDataset, cfg: &RankerConfig, k: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (target, idx) in ds.groups() {
        if idx.len() < k {
            continue;
        }
        let (model, _) = train_ranker(&ds.without_group(&target), cfg)?;
        let truth: Vec<f64> = idx.iter().map(|&i| ds.rows[i].score).collect();
        let preds: Vec<f64> = idx.iter().map(|&i| model.predict(&ds.rows[i].features)).collect();
        out.push(ndcg_at_k(&truth, &preds, k));
    }
    Ok(out)
}

/// A candidate PTEM and the meta-features of the dataset it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceCandidate {
    pub id: String,
    pub meta: MetaFeatureVector,
}

/// Source ids ordered best first; ties break by id.
pub fn recommend_ptem(model: &RankerModel, target: &MetaFeatureVector, sources: &[SourceCandidate]) -> Result<Vec<String>> {
    if sources.is_empty() {
        return Err(Error::config("no candidate PTEMs to rank"));
    }
    let mut scored = Vec::with_capacity(sources.len());
    for s in sources {
        if s.meta.0.len() != target.0.len() || target.0.len() != model.feature_len {
            return Err(Error::Shape {
                expected: model.feature_len,
                got: s.meta.0.len(),
            });
        }
        scored.push((model.predict(&target.abs_diff(&s.meta)), s.id.clone()));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    Ok(scored.into_iter().map(|(_, id)| id).collect())
}

/// A source dataset taking part in ranking-data generation: its PTEM, its
/// meta-features, and (as a pseudo target) an objective to optimize.
#[derive(Debug, Clone)]
pub struct RankingSource {
    pub id: String,
    pub meta: MetaFeatureVector,
    pub ptem: PtemBundle,
}

/// For every pseudo target `tau` and every other source `s`, runs BO on
/// `tau`'s objective starting from `s`'s PTEM under each seed and records
/// `Score_tau(s)`. Failed runs drop their row with a warning.
pub fn build_ranking_dataset<F>(
    sources: &[RankingSource],
    space: &SearchSpace,
    run: &RunConfig,
    seeds: &[u64],
    make_objective: F,
) -> Result<RankingDataset>
where
    F: Fn(usize, u64) -> Box<dyn Objective> + Sync,
{
    if sources.len() < 3 {
        return Err(Error::config("ranking data needs at least three sources"));
    }
    if seeds.is_empty() {
        return Err(Error::config("ranking data needs at least one seed"));
    }
    let jobs: Vec<(usize, usize, u64)> = (0..sources.len())
        .flat_map(|t| (0..sources.len()).filter(move |&s| s != t).map(move |s| (t, s)))
        .flat_map(|(t, s)| seeds.iter().map(move |&k| (t, s, k)))
        .collect();
    let traces: Vec<Result<Vec<f64>>> = jobs
        .par_iter()
        .map(|&(t, s, seed)| {
            let cfg = RunConfig {
                arm: Arm::Proposed,
                seed,
                ..run.clone()
            };
            let mut objective = make_objective(t, seed);
            let log = driver::run(&cfg, space, objective.as_mut(), Some(&sources[s].ptem))?;
            log.trace()
                .into_iter()
                .map(|v| v.ok_or_else(|| Error::Numerical("no successful evaluation".into())))
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    let mut traces = traces.into_iter();
    for pair in jobs.chunks(seeds.len()) {
        let (t, s, _) = pair[0];
        let ok: Result<Vec<Vec<f64>>> = traces.by_ref().take(seeds.len()).collect();
        match ok.and_then(|tr| score_tau(&tr)) {
            Ok(score) => rows.push(RankRow {
                target: sources[t].id.clone(),
                source: sources[s].id.clone(),
                score,
                features: sources[t].meta.abs_diff(&sources[s].meta),
            }),
            Err(e) => warn!("dropping ranking row {} <- {}: {e}", sources[t].id, sources[s].id),
        }
    }
    Ok(RankingDataset { rows })
}

/// Mean and standard deviation, over `draws` repetitions, of the group-mean
/// NDCG@k achieved by ordering every group uniformly at random.
pub fn random_ndcg_baseline(ds: &RankingDataset, k: usize, draws: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<f64>> = ds
        .groups()
        .into_iter()
        .filter(|(_, idx)| idx.len() >= k)
        .map(|(_, idx)| idx.iter().map(|&i| ds.rows[i].score).collect())
        .collect();
    let means: Vec<f64> = (0..draws)
        .map(|_| {
            let total: f64 = groups
                .iter()
                .map(|truth| {
                    let mut order: Vec<usize> = (0..truth.len()).collect();
                    order.shuffle(&mut rng);
                    let preds: Vec<f64> = order.iter().map(|&p| -(p as f64)).collect();
                    ndcg_at_k(truth, &preds, k)
                })
                .sum();
            total / groups.len().max(1) as f64
        })
        .collect();
    mean_std(&means)
}
