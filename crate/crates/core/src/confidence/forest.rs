//! Bagged CART regression forest with JSON persistence.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::substream;
use crate::{Error, Result};

const FORMAT: &str = "docdet-regression-forest";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Unlimited when absent.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.min_samples_leaf == 0 || self.min_samples_split < 2 {
            return Err(Error::Config(
                "need n_trees >= 1, min_samples_leaf >= 1, min_samples_split >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// Tree node; split nodes send `x[feature] <= threshold` left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: Option<usize>,
    pub threshold: Option<f64>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    /// Mean training target reaching the node.
    pub leaf_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            match (n.feature, n.threshold, n.left, n.right) {
                (Some(f), Some(t), Some(l), Some(r)) => i = if x[f] <= t { l } else { r },
                _ => return n.leaf_value,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionForest {
    pub format: String,
    pub version: u32,
    pub n_features: usize,
    pub params: ForestParams,
    pub seed: u64,
    pub n_train: usize,
    pub target_min: f64,
    pub target_max: f64,
    pub trees: Vec<Tree>,
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    params: &'a ForestParams,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn mean(&self, idx: &[usize]) -> f64 {
        shifted_mean(idx.iter().map(|&i| self.y[i]))
    }

    /// Best split as (feature, threshold); reorders `idx`.
    fn best_split(&self, idx: &mut [usize]) -> Option<(usize, f64)> {
        let n = idx.len();
        let leaf = self.params.min_samples_leaf;
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..self.x[0].len() {
            idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for k in 1..n {
                left_sum += self.y[idx[k - 1]];
                let (lo, hi) = (self.x[idx[k - 1]][f], self.x[idx[k]][f]);
                if lo == hi || k < leaf || n - k < leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                // Minimizing child SSE is maximizing this score.
                let score = left_sum * left_sum / k as f64 + right_sum * right_sum / (n - k) as f64;
                if best.is_none_or(|(s, _, _)| score > s) {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some((score, f, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let value = self.mean(idx);
        self.nodes.push(Node {
            feature: None,
            threshold: None,
            left: None,
            right: None,
            leaf_value: value,
        });
        let pure = idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
        let deep = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || deep || idx.len() < self.params.min_samples_split {
            return id;
        }
        let Some((f, t)) = self.best_split(idx) else {
            return id;
        };
        let (mut left, mut right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][f] <= t);
        let l = self.grow(&mut left, depth + 1);
        let r = self.grow(&mut right, depth + 1);
        let node = &mut self.nodes[id];
        node.feature = Some(f);
        node.threshold = Some(t);
        node.left = Some(l);
        node.right = Some(r);
        id
    }
}

/// Mean computed relative to the first value, exact when all values agree.
fn shifted_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut first = None;
    let mut n = 0usize;
    let mut acc = 0.0;
    for v in values {
        let base = *first.get_or_insert(v);
        acc += v - base;
        n += 1;
    }
    first.map_or(f64::NAN, |b| b + acc / n as f64)
}

fn check_dims(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Length {
            expected: x.len() as u64,
            actual: y.len() as u64,
        });
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension("feature vectors must share one positive length".into()));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite training value".into()));
    }
    Ok(d)
}

impl RegressionForest {
    /// Trains on `(x, y)`; tree `k` draws its bootstrap sample from a stream
    /// derived from `seed` and `k`, so the result does not depend on scheduling.
    pub fn train(x: &[Vec<f64>], y: &[f64], params: &ForestParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let n_features = check_dims(x, y)?;
        let n = x.len();
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|k| {
                let mut idx: Vec<usize> = if params.bootstrap {
                    let mut rng = substream(seed, &format!("forest-tree-{k}"));
                    (0..n).map(|_| rng.gen_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                let mut b = Builder {
                    x,
                    y,
                    params,
                    nodes: Vec::new(),
                };
                b.grow(&mut idx, 0);
                Tree { nodes: b.nodes }
            })
            .collect();
        Ok(RegressionForest {
            format: FORMAT.into(),
            version: VERSION,
            n_features,
            params: *params,
            seed,
            n_train: n,
            target_min: y.iter().copied().fold(f64::INFINITY, f64::min),
            target_max: y.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            trees,
        })
    }

    /// Mean of the tree outputs, before clamping.
    pub fn raw_predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::Dimension(format!(
                "feature vector has length {}, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(shifted_mean(self.trees.iter().map(|t| t.predict(x))))
    }

    /// Forest estimate clamped to `[0, 1]`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.raw_predict(x)?.clamp(0.0, 1.0))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: RegressionForest = serde_json::from_str(text).map_err(|e| Error::json(text, e))?;
        if f.format != FORMAT || f.version != VERSION {
            return Err(Error::Format(format!(
                "not a {FORMAT} v{VERSION} model (found {:?} v{})",
                f.format, f.version
            )));
        }
        for tree in &f.trees {
            let ok = !tree.nodes.is_empty()
                && tree.nodes.iter().enumerate().all(|(i, n)| {
                    let child_ok = |c: Option<usize>| c.is_none_or(|c| c > i && c < tree.nodes.len());
                    n.feature.is_none_or(|ft| ft < f.n_features) && child_ok(n.left) && child_ok(n.right)
                });
            if !ok {
                return Err(Error::Format("malformed tree in model file".into()));
            }
        }
        if f.trees.is_empty() {
            return Err(Error::Format("model has no trees".into()));
        }
        Ok(f)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
