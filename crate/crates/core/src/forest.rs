//! Random forest binary classifier used to score candidate segment matches.
//!
//! Trees are CART trees grown on bootstrap samples with Gini impurity, trying a
//! random subset of features at each node. A leaf stores the (weighted)
//! fraction of positive samples that reached it, and the forest score is the
//! mean of the leaves an input lands in, so scores are probabilities in
//! `[0, 1]` rather than vote counts.
//!
//! Every tree draws from its own ChaCha stream selected by the tree index, so
//! training is deterministic for a given seed no matter how many threads run.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::fingerprint_of;
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"NSMRF\0";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeaturesPerSplit {
    Count(usize),
    Named(FeatureRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureRule {
    Sqrt,
    All,
}

impl FeaturesPerSplit {
    pub fn resolve(&self, width: usize) -> usize {
        let n = match self {
            FeaturesPerSplit::Count(n) => *n,
            FeaturesPerSplit::Named(FeatureRule::Sqrt) => (width as f64).sqrt().round() as usize,
            FeaturesPerSplit::Named(FeatureRule::All) => width,
        };
        n.clamp(1, width.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features_per_split: FeaturesPerSplit,
    /// Bootstrap sample size as a fraction of the training rows.
    pub bootstrap: f64,
    pub seed: u64,
    /// Keep at most this many negatives per positive (seeded sub-sample);
    /// `0` keeps every row.
    pub negative_ratio: f64,
    /// Sample weight of positive rows; negatives weigh 1.
    pub positive_weight: f64,
}

impl Default for RfParams {
    fn default() -> Self {
        Self {
            n_trees: 250,
            max_depth: 50,
            min_leaf: 1,
            features_per_split: FeaturesPerSplit::Named(FeatureRule::Sqrt),
            bootstrap: 1.0,
            seed: 0,
            negative_ratio: 20.0,
            positive_weight: 1.0,
        }
    }
}

impl RfParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(format!("rf: {m}")));
        if self.n_trees == 0 || self.max_depth == 0 || self.min_leaf == 0 {
            return bad("n_trees, max_depth and min_leaf must be >= 1");
        }
        if !(self.bootstrap > 0.0 && self.bootstrap <= 1.0) {
            return bad("bootstrap fraction must be in (0, 1]");
        }
        if !(self.negative_ratio >= 0.0) {
            return bad("negative_ratio must be >= 0");
        }
        if !(self.positive_weight > 0.0) || !self.positive_weight.is_finite() {
            return bad("positive_weight must be > 0");
        }
        if let FeaturesPerSplit::Count(0) = self.features_per_split {
            return bad("features_per_split must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    width: usize,
    values: Vec<f64>,
    labels: Vec<bool>,
}

impl TrainingSet {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            values: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[(R, bool)]) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.0.as_ref().len());
        let mut set = Self::new(width);
        for (x, y) in rows {
            set.push(x.as_ref(), *y)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, x: &[f64], label: bool) -> Result<()> {
        if x.len() != self.width {
            return Err(Error::WidthMismatch {
                expected: self.width,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite training feature".into()));
        }
        self.values.extend_from_slice(x);
        self.labels.push(label);
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn label(&self, i: usize) -> bool {
        self.labels[i]
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
    },
}

/// Nodes in pre-order; the root is `nodes[0]`. Inputs with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0usize;
        loop {
            match self.nodes[k] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    k = if x[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], k: usize) -> usize {
            match nodes[k] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + go(nodes, left as usize).max(go(nodes, right as usize))
                }
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    width: usize,
    trees: Vec<Tree>,
    pub fingerprint: String,
}

impl ForestModel {
    /// Assembles a model from hand-built trees. Node references are checked.
    pub fn from_trees(width: usize, trees: Vec<Tree>) -> Result<Self> {
        for t in &trees {
            validate_tree(&t.nodes, width)?;
        }
        Ok(Self {
            width,
            trees,
            fingerprint: String::new(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.width {
            return Err(Error::WidthMismatch {
                expected: self.width,
                got: x.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }
}

impl Tree {
    pub fn from_nodes(nodes: Vec<Node>) -> Self {
        Tree { nodes }
    }
}

pub fn rf_score(model: &ForestModel, x: &[f64]) -> Result<f64> {
    model.score(x)
}

pub fn rf_train(data: &TrainingSet, params: &RfParams) -> Result<ForestModel> {
    Ok(rf_train_with_oob(data, params)?.0)
}

/// Trains and also returns the out-of-bag accuracy at a 0.5 cut, when at
/// least one row was left out of some tree.
pub fn rf_train_with_oob(
    data: &TrainingSet,
    params: &RfParams,
) -> Result<(ForestModel, Option<f64>)> {
    params.validate()?;
    if data.width == 0 {
        return Err(Error::InvalidParams(
            "training rows have no features".into(),
        ));
    }
    let positives = data.positives();
    if positives == 0 || positives == data.len() {
        return Err(Error::SingleClass);
    }

    let rows = select_rows(data, params);
    let n_boot = ((params.bootstrap * rows.len() as f64).round() as usize).max(1);
    let mtry = params.features_per_split.resolve(data.width);

    let grown: Vec<(Tree, Vec<bool>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(params.seed, t);
            let mut in_bag = vec![false; rows.len()];
            let mut sample: Vec<usize> = (0..n_boot)
                .map(|_| {
                    let k = rng.random_range(0..rows.len());
                    in_bag[k] = true;
                    rows[k]
                })
                .collect();
            sample.sort_unstable();
            let mut grower = Grower {
                data,
                params,
                mtry,
                rng,
                nodes: Vec::new(),
            };
            grower.grow(&mut sample, 0);
            (
                Tree {
                    nodes: grower.nodes,
                },
                in_bag,
            )
        })
        .collect();

    let mut oob_sum = vec![0.0; rows.len()];
    let mut oob_n = vec![0usize; rows.len()];
    for (tree, in_bag) in &grown {
        for (k, &row) in rows.iter().enumerate() {
            if !in_bag[k] {
                oob_sum[k] += tree.predict(data.row(row));
                oob_n[k] += 1;
            }
        }
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for (k, &row) in rows.iter().enumerate() {
        if oob_n[k] > 0 {
            total += 1;
            if (oob_sum[k] / oob_n[k] as f64 >= 0.5) == data.label(row) {
                hits += 1;
            }
        }
    }
    let oob = (total > 0).then(|| hits as f64 / total as f64);

    let fingerprint = fingerprint_of(&(params, data.width, data.len(), positives));
    let model = ForestModel {
        width: data.width,
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        fingerprint,
    };
    Ok((model, oob))
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64 + 1);
    rng
}

/// Rows used for training after negative down-sampling, ascending.
fn select_rows(data: &TrainingSet, params: &RfParams) -> Vec<usize> {
    let (pos, mut neg): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| data.label(i));
    let ratio = params.negative_ratio;
    if ratio > 0.0 {
        let keep = ((ratio * pos.len() as f64).round() as usize).max(1);
        if neg.len() > keep {
            let mut rng = tree_rng(params.seed, usize::MAX - 1);
            neg.shuffle(&mut rng);
            neg.truncate(keep);
        }
    }
    let mut rows = pos;
    rows.extend(neg);
    rows.sort_unstable();
    rows
}

struct Grower<'a> {
    data: &'a TrainingSet,
    params: &'a RfParams,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Grower<'_> {
    fn weight(&self, row: usize) -> f64 {
        if self.data.label(row) {
            self.params.positive_weight
        } else {
            1.0
        }
    }

    fn grow(&mut self, sample: &mut [usize], depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let (mut w_pos, mut w_tot) = (0.0, 0.0);
        for &r in sample.iter() {
            let w = self.weight(r);
            w_tot += w;
            if self.data.label(r) {
                w_pos += w;
            }
        }
        let value = w_pos / w_tot;
        let pure = w_pos == 0.0 || w_pos == w_tot;
        if pure || depth >= self.params.max_depth || sample.len() < 2 * self.params.min_leaf {
            self.nodes.push(Node::Leaf { value });
            return id;
        }
        let Some(best) = self.best_split(sample) else {
            self.nodes.push(Node::Leaf { value });
            return id;
        };
        let (feature, threshold) = (best.feature, best.threshold);
        self.nodes.push(Node::Leaf { value }); // replaced below
        let data = self.data;
        let split_at = partition(sample, |&r| data.row(r)[feature] <= threshold);
        let (left_s, right_s) = sample.split_at_mut(split_at);
        let left = self.grow(left_s, depth + 1);
        let right = self.grow(right_s, depth + 1);
        self.nodes[id as usize] = Node::Split {
            feature: feature as u32,
            threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&mut self, sample: &[usize]) -> Option<BestSplit> {
        let width = self.data.width;
        let mut features: Vec<usize> = (0..width).collect();
        let (chosen, _) = features.partial_shuffle(&mut self.rng, self.mtry);
        let chosen = chosen.to_vec();

        let min_leaf = self.params.min_leaf;
        let mut order: Vec<(f64, f64, bool)> = Vec::with_capacity(sample.len());
        let mut best: Option<BestSplit> = None;
        for feature in chosen {
            order.clear();
            order.extend(sample.iter().map(|&r| {
                (
                    self.data.row(r)[feature],
                    self.weight(r),
                    self.data.label(r),
                )
            }));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            if order[0].0 == order[order.len() - 1].0 {
                continue;
            }
            let (tot_w, tot_pos) = order.iter().fold((0.0, 0.0), |(w, p), o| {
                (w + o.1, if o.2 { p + o.1 } else { p })
            });
            let (mut lw, mut lp) = (0.0, 0.0);
            for i in 0..order.len() - 1 {
                lw += order[i].1;
                if order[i].2 {
                    lp += order[i].1;
                }
                let (v, next) = (order[i].0, order[i + 1].0);
                if v == next || i + 1 < min_leaf || order.len() - i - 1 < min_leaf {
                    continue;
                }
                let (rw, rp) = (tot_w - lw, tot_pos - lp);
                let impurity = lw * gini(lp / lw) + rw * gini(rp / rw);
                if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    let mid = v + 0.5 * (next - v);
                    let threshold = if mid < next { mid } else { v };
                    best = Some(BestSplit {
                        feature,
                        threshold,
                        impurity,
                    });
                }
            }
        }
        best
    }
}

fn gini(p: f64) -> f64 {
    2.0 * p * (1.0 - p)
}

/// Stable-enough in-place partition; returns the number of elements for which
/// `pred` holds, which are moved to the front.
fn partition<T, F: Fn(&T) -> bool>(v: &mut [T], pred: F) -> usize {
    let mut k = 0;
    for i in 0..v.len() {
        if pred(&v[i]) {
            v.swap(i, k);
            k += 1;
        }
    }
    k
}

fn validate_tree(nodes: &[Node], width: usize) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidParams(format!("forest: {m}")));
    if nodes.is_empty() {
        return bad("empty tree".into());
    }
    for (k, n) in nodes.iter().enumerate() {
        match *n {
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if feature as usize >= width {
                    return bad(format!("node {k} splits on feature {feature} >= {width}"));
                }
                if !threshold.is_finite() {
                    return bad(format!("node {k} has a non-finite threshold"));
                }
                let ok = |c: u32| (c as usize) > k && (c as usize) < nodes.len();
                if !ok(left) || !ok(right) {
                    return bad(format!("node {k} has out-of-order children"));
                }
            }
            Node::Leaf { value } => {
                if !(0.0..=1.0).contains(&value) {
                    return bad(format!("leaf {k} value {value} outside [0, 1]"));
                }
            }
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    version: u32,
    width: usize,
    fingerprint: String,
    node_counts: Vec<usize>,
}

pub fn encode_model(model: &ForestModel) -> Vec<u8> {
    let header = ModelHeader {
        version: MODEL_VERSION,
        width: model.width,
        fingerprint: model.fingerprint.clone(),
        node_counts: model.trees.iter().map(|t| t.nodes.len()).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &model.trees {
        for n in &t.nodes {
            match *n {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    out.push(1);
                    out.extend_from_slice(&feature.to_le_bytes());
                    out.extend_from_slice(&threshold.to_le_bytes());
                    out.extend_from_slice(&left.to_le_bytes());
                    out.extend_from_slice(&right.to_le_bytes());
                }
                Node::Leaf { value } => {
                    out.push(0);
                    out.extend_from_slice(&value.to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<ForestModel> {
    let bad = |m: &str| Error::parse("<model>", 0, m.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos.checked_add(n).ok_or_else(|| bad("overflow"))?)
            .ok_or_else(|| bad("truncated model file"))?;
        pos += n;
        Ok(s)
    };
    if take(6)? != MAGIC {
        return Err(bad("not an nsm forest model (bad magic)"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let hlen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let header: ModelHeader =
        serde_json::from_slice(take(hlen)?).map_err(|e| bad(&format!("bad header: {e}")))?;
    if header.node_counts.is_empty() {
        return Err(bad("model has no trees"));
    }
    let mut trees = Vec::with_capacity(header.node_counts.len());
    for &count in &header.node_counts {
        let mut nodes = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let tag = take(1)?[0];
            let node = match tag {
                1 => Node::Split {
                    feature: u32::from_le_bytes(take(4)?.try_into().unwrap()),
                    threshold: f64::from_le_bytes(take(8)?.try_into().unwrap()),
                    left: u32::from_le_bytes(take(4)?.try_into().unwrap()),
                    right: u32::from_le_bytes(take(4)?.try_into().unwrap()),
                },
                0 => Node::Leaf {
                    value: f64::from_le_bytes(take(8)?.try_into().unwrap()),
                },
                _ => return Err(bad("bad node tag")),
            };
            nodes.push(node);
        }
        validate_tree(&nodes, header.width)?;
        trees.push(Tree { nodes });
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after model"));
    }
    Ok(ForestModel {
        width: header.width,
        trees,
        fingerprint: header.fingerprint,
    })
}

pub fn rf_save(model: &ForestModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn rf_load(path: &Path) -> Result<ForestModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes).map_err(|e| match e {
        Error::Parse { msg, .. } => Error::parse(path, 0, msg),
        other => other,
    })
}
