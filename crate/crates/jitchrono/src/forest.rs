//! Random forest binary classifier, built from scratch.
//!
//! Bootstrap sampling per tree, a random feature subset at every split,
//! Gini impurity splitting, out-of-bag bookkeeping, and both an
//! accuracy-based (permutation) and an impurity-based importance measure.
//!
//! All randomness is derived from the config seed plus tree/feature
//! indexes, so training is bit-identical for any worker count.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::FeatureMatrix;
use crate::seeding;

const TREE_STREAM: u64 = 0x7472_6565; // per-tree training rng
const PERM_STREAM: u64 = 0x7065_726d; // per-(tree, feature) permutation rng

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("single class: training data must contain both classes")]
    SingleClass,
    #[error("dimension mismatch: row has {got} values, forest expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("no out-of-bag rows in any tree; cannot compute accuracy-based importance")]
    NoOob,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features tried per split; defaults to floor(sqrt(p)).
    pub mtry: Option<usize>,
    /// None = unlimited.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            mtry: None,
            max_depth: None,
            min_samples_split: 2,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn effective_mtry(&self, p: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (p as f64).sqrt().floor() as usize)
            .clamp(1, p)
    }
}

/// Binary Gini impurity: 2 q (1 - q) with q the positive fraction.
pub fn gini(neg: usize, pos: usize) -> f64 {
    let n = neg + pos;
    assert!(n >= 1, "gini of an empty node is undefined");
    let q = pos as f64 / n as f64;
    2.0 * q * (1.0 - q)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
        impurity_decrease: f64,
        n_samples: u32,
    },
    Leaf {
        neg: u32,
        pos: u32,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Route a row to its leaf; returns (neg, pos) counts.
    pub fn leaf_counts(&self, row: &[f64]) -> (u32, u32) {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { neg, pos } => return (*neg, *pos),
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    idx = if row[*feature] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    /// Vote of this tree: 1 positive, 0 negative, 0.5 for a tied leaf.
    pub fn vote(&self, row: &[f64]) -> f64 {
        let (neg, pos) = self.leaf_counts(row);
        match pos.cmp(&neg) {
            std::cmp::Ordering::Greater => 1.0,
            std::cmp::Ordering::Equal => 0.5,
            std::cmp::Ordering::Less => 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
    /// Per tree: true where the training row was absent from its bootstrap.
    pub oob_masks: Vec<Vec<bool>>,
    pub feature_names: Vec<String>,
    pub config: ForestConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImportanceKind {
    TypeI,
    TypeII,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub kind: ImportanceKind,
    pub scores: BTreeMap<String, f64>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct TreeBuilder<'a> {
    m: &'a FeatureMatrix,
    mtry: usize,
    max_depth: Option<usize>,
    min_samples_split: usize,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    fn counts(&self, samples: &[usize]) -> (usize, usize) {
        let pos = samples.iter().filter(|&&i| self.m.labels[i]).count();
        (samples.len() - pos, pos)
    }

    /// Best split among `mtry` randomly chosen features.
    /// Ties break to the lowest feature index, then the lowest threshold:
    /// candidates are scanned in ascending (feature, threshold) order and
    /// only a strictly larger gain replaces the incumbent.
    fn find_split(&self, samples: &[usize], rng: &mut impl Rng) -> Option<BestSplit> {
        let p = self.m.n_features();
        let mut candidates: Vec<usize> =
            rand::seq::index::sample(rng, p, self.mtry.min(p)).into_vec();
        candidates.sort_unstable();

        let (neg, pos) = self.counts(samples);
        let parent_gini = gini(neg, pos);
        let n = samples.len() as f64;
        let mut best: Option<BestSplit> = None;

        for &f in &candidates {
            let mut pairs: Vec<(f64, bool)> = samples
                .iter()
                .map(|&i| (self.m.value(i, f), self.m.labels[i]))
                .collect();
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

            let mut left_neg = 0usize;
            let mut left_pos = 0usize;
            for k in 0..pairs.len() - 1 {
                if pairs[k].1 {
                    left_pos += 1;
                } else {
                    left_neg += 1;
                }
                if pairs[k].0 == pairs[k + 1].0 {
                    continue;
                }
                let threshold = pairs[k].0 + (pairs[k + 1].0 - pairs[k].0) / 2.0;
                let right_neg = neg - left_neg;
                let right_pos = pos - left_pos;
                let nl = (left_neg + left_pos) as f64;
                let nr = (right_neg + right_pos) as f64;
                let gain = parent_gini
                    - nl / n * gini(left_neg, left_pos)
                    - nr / n * gini(right_neg, right_pos);
                if gain > best.as_ref().map_or(1e-12, |b| b.gain) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn build(&mut self, samples: &[usize], depth: usize, rng: &mut impl Rng) -> u32 {
        let (neg, pos) = self.counts(samples);
        let make_leaf = |nodes: &mut Vec<Node>| {
            nodes.push(Node::Leaf {
                neg: neg as u32,
                pos: pos as u32,
            });
            (nodes.len() - 1) as u32
        };

        if neg == 0
            || pos == 0
            || samples.len() < self.min_samples_split
            || self.max_depth.is_some_and(|d| depth >= d)
        {
            return make_leaf(&mut self.nodes);
        }
        let Some(split) = self.find_split(samples, rng) else {
            return make_leaf(&mut self.nodes);
        };

        let (left_samples, right_samples): (Vec<usize>, Vec<usize>) = samples
            .iter()
            .partition(|&&i| self.m.value(i, split.feature) <= split.threshold);

        let idx = self.nodes.len();
        self.nodes.push(Node::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left: 0,
            right: 0,
            impurity_decrease: split.gain,
            n_samples: samples.len() as u32,
        });
        let left = self.build(&left_samples, depth + 1, rng);
        let right = self.build(&right_samples, depth + 1, rng);
        if let Node::Internal {
            left: l, right: r, ..
        } = &mut self.nodes[idx]
        {
            *l = left;
            *r = right;
        }
        idx as u32
    }
}

fn train_tree(m: &FeatureMatrix, config: &ForestConfig, tree_idx: usize) -> (Tree, Vec<bool>) {
    let n = m.n_rows();
    let mut rng = seeding::rng(config.seed, &[TREE_STREAM, tree_idx as u64]);

    let mut in_bag = vec![false; n];
    let mut bootstrap = Vec::with_capacity(n);
    for _ in 0..n {
        let i = rng.random_range(0..n);
        in_bag[i] = true;
        bootstrap.push(i);
    }
    let oob_mask: Vec<bool> = in_bag.iter().map(|&b| !b).collect();

    let mut builder = TreeBuilder {
        m,
        mtry: config.effective_mtry(m.n_features()),
        max_depth: config.max_depth,
        min_samples_split: config.min_samples_split,
        nodes: Vec::new(),
    };
    builder.build(&bootstrap, 0, &mut rng);
    (
        Tree {
            nodes: builder.nodes,
        },
        oob_mask,
    )
}

/// Train a forest. Trees are trained in parallel; results are identical
/// for any thread count.
pub fn train_forest(m: &FeatureMatrix, config: &ForestConfig) -> Result<RandomForest, ForestError> {
    assert!(config.n_trees >= 1);
    assert!(config.min_samples_split >= 2);
    let pos = m.labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == m.n_rows() {
        return Err(ForestError::SingleClass);
    }

    let results: Vec<(Tree, Vec<bool>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| train_tree(m, config, t))
        .collect();
    let (trees, oob_masks) = results.into_iter().unzip();
    Ok(RandomForest {
        trees,
        oob_masks,
        feature_names: m.feature_names.clone(),
        config: config.clone(),
    })
}

impl RandomForest {
    /// Fraction of trees voting positive; tied leaves contribute 0.5.
    pub fn predict_proba(&self, row: &[f64]) -> Result<f64, ForestError> {
        if row.len() != self.feature_names.len() {
            return Err(ForestError::DimensionMismatch {
                got: row.len(),
                expected: self.feature_names.len(),
            });
        }
        let votes: f64 = self.trees.iter().map(|t| t.vote(row)).sum();
        Ok(votes / self.trees.len() as f64)
    }

    pub fn classify(&self, row: &[f64]) -> Result<bool, ForestError> {
        Ok(self.predict_proba(row)? >= 0.5)
    }

    pub fn predict_proba_all(&self, m: &FeatureMatrix) -> Result<Vec<f64>, ForestError> {
        (0..m.n_rows()).map(|i| self.predict_proba(m.row(i))).collect()
    }
}

/// Accuracy-based (Type I) importance: per tree, out-of-bag accuracy
/// minus accuracy after a seeded permutation of one feature's OOB
/// values, averaged over trees with a non-empty OOB set.
pub fn importance_type1(
    forest: &RandomForest,
    m: &FeatureMatrix,
) -> Result<ImportanceVector, ForestError> {
    let p = m.n_features();
    let eligible: Vec<usize> = (0..forest.trees.len())
        .filter(|&t| forest.oob_masks[t].iter().any(|&b| b))
        .collect();
    if eligible.is_empty() {
        return Err(ForestError::NoOob);
    }

    // correctness of a tree on one row: 1 right, 0 wrong, 0.5 tied leaf
    let correctness = |tree: &Tree, row: &[f64], label: bool| -> f64 {
        let v = tree.vote(row);
        if v == 0.5 {
            0.5
        } else if (v >= 0.5) == label {
            1.0
        } else {
            0.0
        }
    };

    let per_tree: Vec<Vec<f64>> = eligible
        .par_iter()
        .map(|&t| {
            let tree = &forest.trees[t];
            let oob: Vec<usize> = (0..m.n_rows())
                .filter(|&i| forest.oob_masks[t][i])
                .collect();
            let n_oob = oob.len() as f64;
            let baseline: f64 = oob
                .iter()
                .map(|&i| correctness(tree, m.row(i), m.labels[i]))
                .sum::<f64>()
                / n_oob;

            (0..p)
                .map(|f| {
                    let mut rng =
                        seeding::rng(forest.config.seed, &[PERM_STREAM, t as u64, f as u64]);
                    // permute feature f's values across the OOB rows
                    let mut perm: Vec<usize> = (0..oob.len()).collect();
                    use rand::seq::SliceRandom;
                    perm.shuffle(&mut rng);
                    let score: f64 = oob
                        .iter()
                        .enumerate()
                        .map(|(k, &i)| {
                            let mut row = m.row(i).to_vec();
                            row[f] = m.value(oob[perm[k]], f);
                            correctness(tree, &row, m.labels[i])
                        })
                        .sum::<f64>()
                        / n_oob;
                    baseline - score
                })
                .collect()
        })
        .collect();

    let mut scores = BTreeMap::new();
    for (f, name) in m.feature_names.iter().enumerate() {
        let total: f64 = per_tree.iter().map(|v| v[f]).sum();
        scores.insert(name.clone(), total / eligible.len() as f64);
    }
    Ok(ImportanceVector {
        kind: ImportanceKind::TypeI,
        scores,
    })
}

/// Impurity-based (Type II) importance: per tree, the sample-weighted
/// impurity decrease summed per split feature, averaged over trees.
pub fn importance_type2(forest: &RandomForest) -> ImportanceVector {
    let p = forest.feature_names.len();
    let mut totals = vec![0.0f64; p];
    for tree in &forest.trees {
        let n_root = match &tree.nodes[0] {
            Node::Internal { n_samples, .. } => *n_samples as f64,
            Node::Leaf { neg, pos } => (*neg + *pos) as f64,
        };
        for node in &tree.nodes {
            if let Node::Internal {
                feature,
                impurity_decrease,
                n_samples,
                ..
            } = node
            {
                totals[*feature] += *n_samples as f64 / n_root * impurity_decrease;
            }
        }
    }
    let scores = forest
        .feature_names
        .iter()
        .enumerate()
        .map(|(f, name)| (name.clone(), totals[f] / forest.trees.len() as f64))
        .collect();
    ImportanceVector {
        kind: ImportanceKind::TypeII,
        scores,
    }
}

/// Versioned JSON envelope for caching trained forests.
#[derive(Debug, Serialize, Deserialize)]
pub struct ForestDocument {
    pub format_version: u32,
    pub forest: RandomForest,
}

pub const FOREST_FORMAT_VERSION: u32 = 1;

pub fn forest_to_json(forest: &RandomForest) -> String {
    serde_json::to_string(&ForestDocument {
        format_version: FOREST_FORMAT_VERSION,
        forest: forest.clone(),
    })
    .expect("forest serialization cannot fail")
}

pub fn forest_from_json(json: &str) -> Result<RandomForest, serde_json::Error> {
    let doc: ForestDocument = serde_json::from_str(json)?;
    if doc.format_version != FOREST_FORMAT_VERSION {
        return Err(serde::de::Error::custom(format!(
            "unsupported forest format version {}",
            doc.format_version
        )));
    }
    Ok(doc.forest)
}
