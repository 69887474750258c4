//! CART decision trees with Gini splits and a bagged random forest.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureFamily, FeatureVector, FEATURE_DIM};
use crate::synth::SeededRng;

const FORMAT: &str = "subqe-rfc";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub features_per_split: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            // ceil(sqrt(273))
            features_per_split: 17,
        }
    }
}

impl ForestParams {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidForestParams("n_trees must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidForestParams("min_samples_leaf must be at least 1".into()));
        }
        if self.features_per_split == 0 || self.features_per_split > n_features {
            return Err(Error::InvalidForestParams(format!(
                "features_per_split must be in [1, {n_features}], got {}",
                self.features_per_split
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        /// Samples with `x[feature] <= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
        /// Weighted Gini decrease `n * g - n_l * g_l - n_r * g_r`.
        gain: f64,
    },
    Leaf {
        /// Negative and positive sample counts.
        counts: [u32; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    fn leaf(&self, x: &[f64]) -> [u32; 2] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => at = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { counts } => return *counts,
            }
        }
    }

    /// Leaf-majority vote; ties vote negative.
    pub fn predict(&self, x: &[f64]) -> bool {
        let [neg, pos] = self.leaf(x);
        pos > neg
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }
}

fn gini(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (p0, p1) = (counts[0] as f64 / n, counts[1] as f64 / n);
    1.0 - p0 * p0 - p1 * p1
}

fn class_counts(y: &[bool], idx: &[usize]) -> [usize; 2] {
    let pos = idx.iter().filter(|&&i| y[i]).count();
    [idx.len() - pos, pos]
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    /// Weighted child impurity `n_l * g_l + n_r * g_r`.
    child_impurity: f64,
}

fn best_split_on_feature(
    x: &[Vec<f64>],
    y: &[bool],
    idx: &[usize],
    feature: usize,
    min_leaf: usize,
    buf: &mut Vec<(f64, bool)>,
) -> Option<(f64, f64)> {
    buf.clear();
    buf.extend(idx.iter().map(|&i| (x[i][feature], y[i])));
    buf.sort_by(|a, b| a.0.total_cmp(&b.0));
    if buf[0].0 == buf[buf.len() - 1].0 {
        return None;
    }
    let n = buf.len();
    let total_pos = buf.iter().filter(|v| v.1).count();
    let mut left = [0usize; 2];
    let mut best: Option<(f64, f64)> = None;
    for k in 0..n - 1 {
        left[usize::from(buf[k].1)] += 1;
        if buf[k].0 == buf[k + 1].0 {
            continue;
        }
        let n_left = k + 1;
        if n_left < min_leaf || n - n_left < min_leaf {
            continue;
        }
        let right = [n - n_left - (total_pos - left[1]), total_pos - left[1]];
        let impurity = n_left as f64 * gini(left) + (n - n_left) as f64 * gini(right);
        if best.is_none_or(|(b, _)| impurity < b) {
            let threshold = buf[k].0 + (buf[k + 1].0 - buf[k].0) / 2.0;
            // midpoint may round up to the right value
            let threshold = if threshold >= buf[k + 1].0 { buf[k].0 } else { threshold };
            best = Some((impurity, threshold));
        }
    }
    best
}

/// Grows one tree on the samples listed in `sample_idx` (duplicates allowed).
pub fn fit_tree<R: Rng + ?Sized>(
    x: &[Vec<f64>],
    y: &[bool],
    sample_idx: &[usize],
    params: &ForestParams,
    rng: &mut R,
) -> DecisionTree {
    let n_features = x.first().map_or(0, Vec::len);
    let mut nodes = vec![Node::Leaf { counts: [0, 0] }];
    let mut stack: Vec<(usize, Vec<usize>, usize)> = vec![(0, sample_idx.to_vec(), 0)];
    let mut features: Vec<usize> = (0..n_features).collect();
    let mut buf = Vec::with_capacity(sample_idx.len());

    while let Some((at, idx, depth)) = stack.pop() {
        let counts = class_counts(y, &idx);
        let leaf = Node::Leaf {
            counts: [counts[0] as u32, counts[1] as u32],
        };
        let pure = counts[0] == 0 || counts[1] == 0;
        let too_small = idx.len() < 2 * params.min_samples_leaf;
        let too_deep = params.max_depth.is_some_and(|d| depth >= d);
        if pure || too_small || too_deep {
            nodes[at] = leaf;
            continue;
        }

        // visit features in random order until enough non-constant ones were evaluated
        features.shuffle(rng);
        let mut evaluated = 0;
        let mut best: Option<BestSplit> = None;
        for &f in &features {
            if evaluated >= params.features_per_split {
                break;
            }
            let min_v = idx.iter().map(|&i| x[i][f]).fold(f64::INFINITY, f64::min);
            let max_v = idx.iter().map(|&i| x[i][f]).fold(f64::NEG_INFINITY, f64::max);
            if min_v == max_v {
                continue;
            }
            evaluated += 1;
            if let Some((impurity, threshold)) =
                best_split_on_feature(x, y, &idx, f, params.min_samples_leaf, &mut buf)
            {
                if best.as_ref().is_none_or(|b| impurity < b.child_impurity) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        child_impurity: impurity,
                    });
                }
            }
        }
        let Some(split) = best else {
            nodes[at] = leaf;
            continue;
        };
        let parent_impurity = idx.len() as f64 * gini(counts);
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| x[i][split.feature] <= split.threshold);
        let left = nodes.len();
        let right = left + 1;
        nodes.push(Node::Leaf { counts: [0, 0] });
        nodes.push(Node::Leaf { counts: [0, 0] });
        nodes[at] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            gain: (parent_impurity - split.child_impurity).max(0.0),
        };
        stack.push((right, right_idx, depth + 1));
        stack.push((left, left_idx, depth + 1));
    }
    DecisionTree { nodes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub params: ForestParams,
    pub seed: u64,
    pub n_features: usize,
    pub trees: Vec<DecisionTree>,
}

/// Seed of tree `i` derived from the forest seed (splitmix64 finalizer).
pub fn tree_seed(seed: u64, i: usize) -> u64 {
    let mut z = seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Bootstrap indices of tree `i`, drawn from its own seed.
pub fn bootstrap_indices(n: usize, seed: u64, i: usize) -> Vec<usize> {
    let mut rng = SeededRng::new(tree_seed(seed, i));
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Trains a forest on raw feature rows of any fixed width.
pub fn train_forest(x: &[Vec<f64>], y: &[bool], params: &ForestParams, seed: u64) -> Result<RandomForestModel> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 || y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::SingleClassData);
    }
    let n_features = x[0].len();
    if x.iter().any(|row| row.len() != n_features) {
        return Err(Error::ShapeMismatch("feature rows differ in length".into()));
    }
    params.validate(n_features)?;
    let trees = (0..params.n_trees)
        .map(|i| {
            let idx = bootstrap_indices(x.len(), seed, i);
            // split choices use a stream separate from the bootstrap draws
            let mut rng = SeededRng::new(tree_seed(seed ^ 0x5eed, i));
            fit_tree(x, y, &idx, params, &mut rng)
        })
        .collect();
    Ok(RandomForestModel {
        params: params.clone(),
        seed,
        n_features,
        trees,
    })
}

pub fn train_rfc(data: &[(FeatureVector, bool)], params: &ForestParams, seed: u64) -> Result<RandomForestModel> {
    let x: Vec<Vec<f64>> = data.iter().map(|(f, _)| f.values().to_vec()).collect();
    let y: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
    train_forest(&x, &y, params, seed)
}

impl RandomForestModel {
    /// Fraction of trees voting positive.
    pub fn score(&self, x: &[f64]) -> f64 {
        let votes = self.trees.iter().filter(|t| t.predict(x)).count();
        votes as f64 / self.trees.len() as f64
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.score(x) > 0.5
    }

    /// Mean decrease in Gini impurity per feature, normalized to sum to 1.
    ///
    /// Each tree's importances are normalized before averaging. A forest
    /// without any split gets uniform importances.
    pub fn feature_importance(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.n_features];
        for tree in &self.trees {
            let mut per_tree = vec![0.0; self.n_features];
            for node in &tree.nodes {
                if let Node::Split { feature, gain, .. } = node {
                    per_tree[*feature] += gain;
                }
            }
            let sum: f64 = per_tree.iter().sum();
            if sum > 0.0 {
                for (t, p) in total.iter_mut().zip(&per_tree) {
                    *t += p / sum;
                }
            }
        }
        let sum: f64 = total.iter().sum();
        if sum == 0.0 {
            return vec![1.0 / self.n_features as f64; self.n_features];
        }
        total.iter().map(|t| t / sum).collect()
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Envelope<'a> {
            format: &'a str,
            version: u32,
            model: &'a RandomForestModel,
        }
        serde_json::to_writer(
            w,
            &Envelope {
                format: FORMAT,
                version: VERSION,
                model: self,
            },
        )?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Envelope {
            format: String,
            version: u32,
            model: RandomForestModel,
        }
        let env: Envelope = serde_json::from_reader(r)?;
        if env.format != FORMAT || env.version != VERSION {
            return Err(Error::Format(format!(
                "expected {FORMAT} v{VERSION}, found {} v{}",
                env.format, env.version
            )));
        }
        Ok(env.model)
    }
}

pub fn rfc_score(model: &RandomForestModel, x: &FeatureVector) -> f64 {
    model.score(x.values())
}

pub fn feature_importance(model: &RandomForestModel) -> Vec<f64> {
    model.feature_importance()
}

/// Importance summed over the four feature families of the 273-slot layout.
pub fn family_importance(importance: &[f64]) -> HashMap<FeatureFamily, f64> {
    let mut out = HashMap::new();
    for (slot, v) in importance.iter().enumerate().take(FEATURE_DIM) {
        *out.entry(FeatureFamily::of_slot(slot)).or_insert(0.0) += v;
    }
    out
}

/// Fraction of rows whose forest prediction matches the label.
pub fn accuracy(model: &RandomForestModel, x: &[Vec<f64>], y: &[bool]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let correct = x.iter().zip(y).filter(|(row, &l)| model.predict(row) == l).count();
    correct as f64 / x.len() as f64
}
