//! Random-forest regression: CART trees grown on variance reduction,
//! bootstrap resampling, optional feature subsampling per split and
//! impurity-decrease importances.

use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::seed;

pub const FOREST_FORMAT: &str = "sohforge-forest";
pub const FOREST_VERSION: u32 = 1;

/// Gains closer than this (relative to the node's total squared error) are
/// treated as ties, so equal partitions reached through different summation
/// orders resolve by feature index and threshold.
pub const GAIN_TIE_RTOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid forest config: {0}")]
    InvalidConfig(String),
    #[error("second feature has zero importance")]
    ZeroImportance,
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeaturesPerSplit {
    All,
    Count(usize),
}

impl Serialize for FeaturesPerSplit {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            FeaturesPerSplit::All => s.serialize_str("all"),
            FeaturesPerSplit::Count(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for FeaturesPerSplit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) => Ok(FeaturesPerSplit::Count(n)),
            Raw::Name(s) if s == "all" => Ok(FeaturesPerSplit::All),
            Raw::Name(s) => Err(serde::de::Error::custom(format!(
                "features_per_split must be a count or \"all\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: FeaturesPerSplit,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 8,
            min_samples_leaf: 5,
            features_per_split: FeaturesPerSplit::All,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    /// One deterministic CART tree on the full data.
    pub fn single_tree(max_depth: usize, min_samples_leaf: usize) -> Self {
        ForestConfig {
            n_trees: 1,
            max_depth,
            min_samples_leaf,
            features_per_split: FeaturesPerSplit::All,
            bootstrap: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 || self.min_samples_leaf == 0 {
            return Err(ForestError::InvalidConfig("n_trees and min_samples_leaf must be >= 1".into()));
        }
        if self.features_per_split == FeaturesPerSplit::Count(0) {
            return Err(ForestError::InvalidConfig("features_per_split must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        samples: usize,
    },
}

/// Nodes in preorder; the root is `nodes[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestModel {
    pub format: String,
    pub version: u32,
    pub config: ForestConfig,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    pub feature_importances: Vec<f64>,
    /// Set when every training target was equal.
    pub degenerate_targets: bool,
}

/// Best split over the given sorted-by-feature candidates.
#[derive(Debug, Clone, Copy)]
struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Mean and total squared error of a node. The mean is accumulated as an
/// offset from the first target so constant nodes reproduce it exactly.
pub fn node_sse(idx: &[usize], y: &[f64]) -> (f64, f64) {
    let n = idx.len() as f64;
    let y0 = y[idx[0]];
    let mean = y0 + idx.iter().map(|&i| y[i] - y0).sum::<f64>() / n;
    let sse = idx.iter().map(|&i| (y[i] - mean) * (y[i] - mean)).sum::<f64>();
    (mean, sse)
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    config: &'a ForestConfig,
    n_features: usize,
    importance: Vec<f64>,
    rng: rand_chacha::ChaCha8Rng,
}

impl<'a> Grower<'a> {
    fn candidates(&mut self) -> Vec<usize> {
        match self.config.features_per_split {
            FeaturesPerSplit::Count(k) if k < self.n_features => {
                let mut f = index::sample(&mut self.rng, self.n_features, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..self.n_features).collect(),
        }
    }

    /// Gains use targets centered on the node mean; raw sums lose the
    /// decrease to cancellation when the node variance is small next to the
    /// mean, which breaks the tie rule.
    fn best_split(&mut self, idx: &[usize], mean: f64, parent_sse: f64) -> Option<SplitChoice> {
        let n = idx.len();
        let min_leaf = self.config.min_samples_leaf;
        let total: f64 = idx.iter().map(|&i| self.y[i] - mean).sum();
        let tie = GAIN_TIE_RTOL * parent_sse.max(f64::MIN_POSITIVE);
        let mut best: Option<SplitChoice> = None;
        let mut order = idx.to_vec();
        for f in self.candidates() {
            order.copy_from_slice(idx);
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for k in 1..n {
                left_sum += self.y[order[k - 1]] - mean;
                let (lo, hi) = (self.x[order[k - 1]][f], self.x[order[k]][f]);
                if k < min_leaf || n - k < min_leaf || !(lo < hi) {
                    continue;
                }
                let (nl, nr) = (k as f64, (n - k) as f64);
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl + right_sum * right_sum / nr - total * total / n as f64;
                if best.map_or(gain > tie, |b| gain > b.gain + tie) {
                    best = Some(SplitChoice {
                        feature: f,
                        threshold: 0.5 * (lo + hi),
                        gain,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, nodes: &mut Vec<Node>) -> usize {
        let (mean, sse) = node_sse(&idx, self.y);
        let at = nodes.len();
        nodes.push(Node::Leaf {
            value: mean,
            samples: idx.len(),
        });
        if depth >= self.config.max_depth || idx.len() < 2 * self.config.min_samples_leaf || sse <= 0.0 {
            return at;
        }
        let Some(choice) = self.best_split(&idx, mean, sse) else {
            return at;
        };
        let (li, ri): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][choice.feature] <= choice.threshold);
        let (_, sse_l) = node_sse(&li, self.y);
        let (_, sse_r) = node_sse(&ri, self.y);
        self.importance[choice.feature] += (sse - sse_l - sse_r).max(0.0);
        let left = self.grow(li, depth + 1, nodes);
        let right = self.grow(ri, depth + 1, nodes);
        nodes[at] = Node::Split {
            feature: choice.feature,
            threshold: choice.threshold,
            left,
            right,
        };
        at
    }
}

/// Fits a forest on rows `x` (one feature vector per sample) and targets `y`.
pub fn forest_fit(x: &[Vec<f64>], y: &[f64], config: &ForestConfig) -> Result<ForestModel, ForestError> {
    config.validate()?;
    if x.len() != y.len() {
        return Err(ForestError::ShapeMismatch(format!("{} rows but {} targets", x.len(), y.len())));
    }
    let n_features = x.first().map_or(0, |r| r.len());
    if n_features == 0 {
        return Err(ForestError::ShapeMismatch("need at least one feature".into()));
    }
    if x.iter().any(|r| r.len() != n_features) {
        return Err(ForestError::ShapeMismatch("rows have differing feature counts".into()));
    }
    if y.len() < 2 * config.min_samples_leaf {
        return Err(ForestError::ShapeMismatch(format!(
            "{} samples, need at least 2 * min_samples_leaf = {}",
            y.len(),
            2 * config.min_samples_leaf
        )));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(ForestError::ShapeMismatch("non-finite feature or target".into()));
    }
    let degenerate = y.iter().all(|v| *v == y[0]);
    if degenerate {
        log::warn!("all {} forest targets are equal; trees are single leaves", y.len());
    }
    let mut importance = vec![0.0; n_features];
    let mut trees = Vec::with_capacity(config.n_trees);
    for t in 0..config.n_trees {
        let tree_seed = seed::derive(config.seed, &[t as u64]);
        let mut rng = seed::rng(seed::derive_named(tree_seed, "bootstrap"));
        let idx: Vec<usize> = if config.bootstrap {
            let mut v: Vec<usize> = (0..y.len()).map(|_| rng.gen_range(0..y.len())).collect();
            v.sort_unstable();
            v
        } else {
            (0..y.len()).collect()
        };
        let mut grower = Grower {
            x,
            y,
            config,
            n_features,
            importance: vec![0.0; n_features],
            rng: seed::rng(seed::derive_named(tree_seed, "features")),
        };
        let mut nodes = Vec::new();
        grower.grow(idx, 0, &mut nodes);
        for (a, b) in importance.iter_mut().zip(&grower.importance) {
            *a += b;
        }
        trees.push(Tree { nodes });
    }
    let total: f64 = importance.iter().sum();
    if total > 0.0 {
        importance.iter_mut().for_each(|v| *v /= total);
    }
    Ok(ForestModel {
        format: FOREST_FORMAT.into(),
        version: FOREST_VERSION,
        config: *config,
        n_features,
        trees,
        feature_importances: importance,
        degenerate_targets: degenerate,
    })
}

impl ForestModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64, ForestError> {
        if x.len() != self.n_features {
            return Err(ForestError::ShapeMismatch(format!(
                "{} features for a forest trained on {}",
                x.len(),
                self.n_features
            )));
        }
        // sorted accumulation makes the mean independent of tree order
        let mut preds: Vec<f64> = self.trees.iter().map(|t| t.predict(x)).collect();
        preds.sort_by(f64::total_cmp);
        let p0 = preds[0];
        let spread: f64 = preds[1..].iter().map(|p| p - p0).sum();
        Ok(p0 + spread / preds.len() as f64)
    }

    /// Importance of feature 0 over feature 1.
    pub fn importance_ratio(&self) -> Result<f64, ForestError> {
        if self.n_features != 2 {
            return Err(ForestError::ShapeMismatch(format!(
                "importance ratio needs exactly 2 features, model has {}",
                self.n_features
            )));
        }
        let (a, b) = (self.feature_importances[0], self.feature_importances[1]);
        if !(b > 0.0) {
            return Err(ForestError::ZeroImportance);
        }
        Ok(a / b)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ForestError> {
        let err = |reason: String| ForestError::Checkpoint {
            path: "<string>".into(),
            reason,
        };
        let m: ForestModel = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
        if m.format != FOREST_FORMAT || m.version != FOREST_VERSION {
            return Err(err(format!("unsupported checkpoint {} v{}", m.format, m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ForestError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| ForestError::Checkpoint {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ForestError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ForestError::Checkpoint {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text).map_err(|e| match e {
            ForestError::Checkpoint { reason, .. } => ForestError::Checkpoint {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }
}
