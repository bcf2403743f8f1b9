//! Random-forest regression: bootstrap-sampled CART trees with per-split
//! feature subsampling, out-of-bag prediction and impurity importance.
//!
//! Training is a pure function of `(X, y, params)`. Tree `t` draws from its
//! own ChaCha8 stream seeded with [`tree_seed`]`(seed, t)`, so adding trees
//! never changes the earlier ones.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("invalid forest parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows trees until the other stopping rules apply.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` means `ceil(n_features / 3)`.
    pub mtry: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 300, max_depth: None, min_samples_leaf: 2, mtry: None, seed: 0 }
    }
}

impl ForestParams {
    pub fn resolved_mtry(&self, n_features: usize) -> usize {
        self.mtry.unwrap_or_else(|| n_features.div_ceil(3)).max(1)
    }

    fn validate(&self, n_features: usize) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidParams("n_trees must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(ForestError::InvalidParams("min_samples_leaf must be at least 1".into()));
        }
        let mtry = self.resolved_mtry(n_features);
        if n_features == 0 || mtry > n_features {
            return Err(ForestError::InvalidParams(format!(
                "mtry {mtry} must lie in 1..={n_features}"
            )));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of tree `index`: `mix64(seed ^ mix64(index))`.
pub fn tree_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index))
}

/// Tree node. Serialized compactly: a leaf is its value, a split is
/// `[feature, threshold, left, right, gain]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Leaf(f64),
    /// Rows with `x[feature] <= threshold` go left. `gain` is the decrease in
    /// summed squared error.
    Split(usize, f64, usize, usize, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split(f, t, l, r, _) => i = if x[f] <= t { l } else { r },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split(_, _, l, r, _) => 1 + walk(nodes, l).max(walk(nodes, r)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Fixed-length bit set stored as a hex string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMask {
    len: usize,
    bytes: Vec<u8>,
}

impl BitMask {
    pub fn new(len: usize) -> Self {
        BitMask { len, bytes: vec![0; len.div_ceil(8)] }
    }

    pub fn set(&mut self, i: usize) {
        self.bytes[i / 8] |= 1 << (i % 8);
    }

    pub fn get(&self, i: usize) -> bool {
        self.bytes[i / 8] & (1 << (i % 8)) != 0
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl Serialize for BitMask {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}:{}", self.len, hex::encode(&self.bytes)))
    }
}

impl<'de> Deserialize<'de> for BitMask {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let s = String::deserialize(d)?;
        let (len, body) = s.split_once(':').ok_or_else(|| D::Error::custom("bit mask needs len:hex"))?;
        let len: usize = len.parse().map_err(D::Error::custom)?;
        let bytes = hex::decode(body).map_err(D::Error::custom)?;
        if bytes.len() != len.div_ceil(8) {
            return Err(D::Error::custom("bit mask length mismatch"));
        }
        Ok(BitMask { len, bytes })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub params: ForestParams,
    pub mtry: usize,
    pub feature_names: Vec<String>,
    /// Rows each tree saw at least once in its bootstrap sample.
    pub in_bag: Vec<BitMask>,
    pub trees: Vec<Tree>,
}

fn check_finite(x: &[Vec<f64>], y: &[f64], n_features: usize) -> Result<(), ForestError> {
    for (r, row) in x.iter().enumerate() {
        if row.len() != n_features {
            return Err(ForestError::DimensionMismatch { expected: n_features, got: row.len() });
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(ForestError::NonFiniteInput { row: r, col: c });
        }
    }
    if let Some(r) = y.iter().position(|v| !v.is_finite()) {
        return Err(ForestError::NonFiniteInput { row: r, col: n_features });
    }
    Ok(())
}

struct Builder<'a> {
    columns: &'a [Vec<f64>],
    y: &'a [f64],
    min_leaf: usize,
    max_depth: Option<usize>,
    mtry: usize,
    nodes: Vec<Node>,
    scratch: Vec<(f64, f64)>,
}

/// Mean taken relative to the first value, so equal inputs average to
/// exactly that value.
fn shifted_mean(mut values: impl Iterator<Item = f64>) -> Option<f64> {
    let first = values.next()?;
    let (sum, n) = values.fold((0.0, 1usize), |(s, n), v| (s + (v - first), n + 1));
    Some(first + sum / n as f64)
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        let first = self.y[rows[0]];
        let constant = rows.iter().all(|&r| self.y[r] == first);
        let mean = shifted_mean(rows.iter().map(|&r| self.y[r])).unwrap_or(first);
        self.nodes.push(Node::Leaf(mean));

        if constant || rows.len() < 2 * self.min_leaf || self.max_depth.is_some_and(|d| depth >= d) {
            return id;
        }
        let n_features = self.columns.len();
        let mut candidates = sample(rng, n_features, self.mtry).into_vec();
        candidates.sort_unstable();

        let mut best: Option<BestSplit> = None;
        for &f in &candidates {
            if let Some(s) = self.best_split_on(f, &rows, mean) {
                if best.as_ref().is_none_or(|b| s.gain > b.gain) {
                    best = Some(s);
                }
            }
        }
        let Some(best) = best else { return id };

        let col = &self.columns[best.feature];
        let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| col[r] <= best.threshold);
        let l = self.grow(left, depth + 1, rng);
        let r = self.grow(right, depth + 1, rng);
        self.nodes[id] = Node::Split(best.feature, best.threshold, l, r, best.gain);
        id
    }

    /// Best midpoint split on one feature, by squared-error reduction.
    fn best_split_on(&mut self, f: usize, rows: &[usize], mean: f64) -> Option<BestSplit> {
        let col = &self.columns[f];
        self.scratch.clear();
        self.scratch.extend(rows.iter().map(|&r| (col[r], self.y[r] - mean)));
        self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
        let pairs = &self.scratch;
        let n = pairs.len();
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let parent = total * total / n as f64;
        let mut left_sum = 0.0;
        let mut best: Option<BestSplit> = None;
        for i in 0..n - 1 {
            left_sum += pairs[i].1;
            let n_left = i + 1;
            if n_left < self.min_leaf {
                continue;
            }
            if n - n_left < self.min_leaf {
                break;
            }
            let (lo, hi) = (pairs[i].0, pairs[i + 1].0);
            if lo == hi {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / (n - n_left) as f64 - parent;
            if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(BestSplit { feature: f, threshold, gain });
            }
        }
        best
    }
}

/// Trains a forest on row-major `x` against `y`.
pub fn fit_forest(
    x: &[Vec<f64>],
    y: &[f64],
    feature_names: Vec<String>,
    params: &ForestParams,
) -> Result<Forest, ForestError> {
    if x.len() != y.len() {
        return Err(ForestError::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(ForestError::TooFewRows(x.len()));
    }
    let n_features = feature_names.len();
    params.validate(n_features)?;
    check_finite(x, y, n_features)?;
    let mtry = params.resolved_mtry(n_features);
    let n = x.len();
    let columns: Vec<Vec<f64>> = (0..n_features).map(|f| x.iter().map(|row| row[f]).collect()).collect();

    let grown: Vec<(Tree, BitMask)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(params.seed, t as u64));
            let mut mask = BitMask::new(n);
            let rows: Vec<usize> = (0..n)
                .map(|_| {
                    let r = rng.random_range(0..n);
                    mask.set(r);
                    r
                })
                .collect();
            let mut b = Builder {
                columns: &columns,
                y,
                min_leaf: params.min_samples_leaf,
                max_depth: params.max_depth,
                mtry,
                nodes: Vec::new(),
                scratch: Vec::with_capacity(n),
            };
            b.grow(rows, 0, &mut rng);
            (Tree { nodes: b.nodes }, mask)
        })
        .collect();
    let (trees, in_bag) = grown.into_iter().unzip();
    Ok(Forest { params: params.clone(), mtry, feature_names, in_bag, trees })
}

impl Forest {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Mean of the per-tree predictions.
    pub fn predict(&self, x: &[f64]) -> Result<f64, ForestError> {
        if x.len() != self.n_features() {
            return Err(ForestError::DimensionMismatch { expected: self.n_features(), got: x.len() });
        }
        if let Some(c) = x.iter().position(|v| !v.is_finite()) {
            return Err(ForestError::NonFiniteInput { row: 0, col: c });
        }
        Ok(shifted_mean(self.trees.iter().map(|t| t.predict(x))).unwrap_or(0.0))
    }

    /// Out-of-bag prediction for each training row; `None` for rows that
    /// every tree sampled.
    pub fn oob_predict(&self, x: &[Vec<f64>]) -> Result<Vec<Option<f64>>, ForestError> {
        let n_train = self.in_bag.first().map_or(0, BitMask::len);
        if x.len() != n_train {
            return Err(ForestError::DimensionMismatch { expected: n_train, got: x.len() });
        }
        x.iter()
            .enumerate()
            .map(|(i, row)| {
                if row.len() != self.n_features() {
                    return Err(ForestError::DimensionMismatch { expected: self.n_features(), got: row.len() });
                }
                let oob = self.trees.iter().zip(&self.in_bag).filter(|(_, bag)| !bag.get(i));
                Ok(shifted_mean(oob.map(|(t, _)| t.predict(row))))
            })
            .collect()
    }

    /// Squared-error reduction per feature, normalized to sum to 1 (all
    /// zeros when no tree split).
    pub fn feature_importance(&self) -> Vec<(String, f64)> {
        let mut totals = vec![0.0; self.n_features()];
        for tree in &self.trees {
            for node in &tree.nodes {
                if let Node::Split(f, _, _, _, gain) = node {
                    totals[*f] += gain;
                }
            }
        }
        let sum: f64 = totals.iter().sum();
        if sum > 0.0 {
            for t in &mut totals {
                *t /= sum;
            }
        }
        self.feature_names.iter().cloned().zip(totals).collect()
    }
}
