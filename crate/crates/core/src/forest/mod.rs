//! Random-forest classifier with seeded, schedule-independent training.
//!
//! Each tree draws its bootstrap sample and per-node feature subsets from its
//! own ChaCha8 stream seeded with `seed ^ tree_index`, so trees can be grown
//! in any order (or in parallel) and the model is identical.

pub mod cv;
mod tree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Label;
use crate::error::{Error, Result};
use crate::features::{self, FeatureVector};

pub use cv::{cross_validate, CvMode, CvOptions, CvReport};
pub use tree::TreeNode;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Training table: one row of feature values per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
    /// Start time of each sample's window, used by blocked cross-validation.
    pub times: Vec<f64>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<Label>) -> Result<Self> {
        let times = (0..rows.len()).map(|i| i as f64).collect();
        let ds = Self { feature_names, rows, labels, times };
        ds.validate()?;
        Ok(ds)
    }

    pub fn from_vectors(vectors: &[FeatureVector]) -> Result<Self> {
        let ds = Self {
            feature_names: features::feature_names(),
            rows: vectors.iter().map(|v| v.values.clone()).collect(),
            labels: vectors.iter().map(|v| v.label).collect(),
            times: vectors.iter().map(|v| v.window_start_t).collect(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rows.len();
        if self.labels.len() != n || self.times.len() != n {
            return Err(Error::Schema("rows, labels and times differ in length".into()));
        }
        if let Some(row) = self.rows.iter().find(|r| r.len() != self.feature_names.len()) {
            return Err(Error::Schema(format!(
                "row has {} values but {} feature names",
                row.len(),
                self.feature_names.len()
            )));
        }
        if self.rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation { field: "features", reason: "non-finite" });
        }
        Ok(())
    }

    /// Distinct labels in ascending order.
    pub fn class_labels(&self) -> Vec<Label> {
        let mut labels = self.labels.clone();
        labels.sort();
        labels.dedup();
        labels
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            times: indices.iter().map(|&i| self.times[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf_size: usize,
    /// `None` means `floor(sqrt(n_features))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 12, min_leaf_size: 2, features_per_split: None, bootstrap: true }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Parameter("n_trees must be > 0".into()));
        }
        if self.min_leaf_size == 0 {
            return Err(Error::Parameter("min_leaf_size must be > 0".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(Error::Parameter("features_per_split must be > 0".into()));
        }
        Ok(())
    }

    pub fn resolved_features_per_split(&self, n_features: usize) -> usize {
        self.features_per_split.unwrap_or_else(|| ((n_features as f64).sqrt().floor() as usize).max(1)).min(n_features)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format_version: u32,
    pub params: ForestParams,
    pub seed: u64,
    pub class_labels: Vec<Label>,
    pub feature_names: Vec<String>,
    pub trees: Vec<TreeNode>,
}

fn tree_rng(seed: u64, tree_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ tree_index as u64)
}

fn bootstrap_sample<R: Rng>(rng: &mut R, n: usize, bootstrap: bool) -> Vec<usize> {
    if bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    }
}

/// Trains a forest. Deterministic in `(dataset order, params, seed)`.
pub fn train(dataset: &Dataset, params: &ForestParams, seed: u64) -> Result<ForestModel> {
    params.validate()?;
    dataset.validate()?;
    if dataset.is_empty() {
        return Err(Error::DegenerateTraining("empty dataset".into()));
    }
    if dataset.n_features() == 0 {
        return Err(Error::Schema("dataset has no features".into()));
    }
    let class_labels = dataset.class_labels();
    if class_labels.len() < 2 {
        return Err(Error::DegenerateTraining(format!("need at least 2 classes, found {}", class_labels.len())));
    }
    let classes: Vec<usize> =
        dataset.labels.iter().map(|l| class_labels.binary_search(l).expect("label listed")).collect();
    let builder = tree::TreeBuilder {
        rows: &dataset.rows,
        classes: &classes,
        n_classes: class_labels.len(),
        max_depth: params.max_depth,
        min_leaf_size: params.min_leaf_size,
        features_per_split: params.resolved_features_per_split(dataset.n_features()),
    };
    let grow = |t: usize| {
        let mut rng = tree_rng(seed, t);
        let sample = bootstrap_sample(&mut rng, dataset.len(), params.bootstrap);
        builder.grow(sample, &mut rng)
    };

    #[cfg(feature = "parallel")]
    let trees = {
        use rayon::prelude::*;
        (0..params.n_trees).into_par_iter().map(grow).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let trees = (0..params.n_trees).map(grow).collect();

    Ok(ForestModel {
        format_version: MODEL_FORMAT_VERSION,
        params: *params,
        seed,
        class_labels,
        feature_names: dataset.feature_names.clone(),
        trees,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    /// Vote share per class, in the model's class order.
    pub probabilities: Vec<f64>,
}

impl ForestModel {
    pub fn predict_values(&self, values: &[f64]) -> Result<Prediction> {
        if values.len() != self.feature_names.len() {
            return Err(Error::Schema(format!(
                "model expects {} features, got {}",
                self.feature_names.len(),
                values.len()
            )));
        }
        let mut votes = vec![0u32; self.class_labels.len()];
        for tree in &self.trees {
            votes[tree.vote(values)] += 1;
        }
        let total = self.trees.len() as f64;
        Ok(Prediction {
            label: self.class_labels[tree::majority(&votes)],
            probabilities: votes.iter().map(|&v| f64::from(v) / total).collect(),
        })
    }

    /// Predicts one feature vector; refuses vectors built from another feature set.
    pub fn predict(&self, vector: &FeatureVector) -> Result<Prediction> {
        if self.feature_names != features::feature_names() {
            return Err(Error::Schema("model was not trained on the window feature set".into()));
        }
        self.predict_values(&vector.values)
    }

    pub fn check_schema(&self, dataset: &Dataset) -> Result<()> {
        if self.feature_names != dataset.feature_names {
            return Err(Error::Schema("feature names differ between model and dataset".into()));
        }
        Ok(())
    }

    pub fn accuracy(&self, dataset: &Dataset) -> Result<f64> {
        self.check_schema(dataset)?;
        let mut correct = 0usize;
        for (row, label) in dataset.rows.iter().zip(&dataset.labels) {
            if self.predict_values(row)?.label == *label {
                correct += 1;
            }
        }
        Ok(correct as f64 / dataset.len().max(1) as f64)
    }

    /// Out-of-bag accuracy on the training dataset. Bootstrap samples are
    /// regenerated from the per-tree seeds. `None` without bootstrapping or
    /// when no sample is ever out of bag.
    pub fn oob_accuracy(&self, training: &Dataset) -> Result<Option<f64>> {
        self.check_schema(training)?;
        if !self.params.bootstrap {
            return Ok(None);
        }
        let n = training.len();
        let mut votes = vec![vec![0u32; self.class_labels.len()]; n];
        for (t, tree) in self.trees.iter().enumerate() {
            let mut in_bag = vec![false; n];
            for i in bootstrap_sample(&mut tree_rng(self.seed, t), n, true) {
                in_bag[i] = true;
            }
            for i in (0..n).filter(|&i| !in_bag[i]) {
                votes[i][tree.vote(&training.rows[i])] += 1;
            }
        }
        let mut scored = 0usize;
        let mut correct = 0usize;
        for (v, label) in votes.iter().zip(&training.labels) {
            if v.iter().all(|&c| c == 0) {
                continue;
            }
            scored += 1;
            if self.class_labels[tree::majority(v)] == *label {
                correct += 1;
            }
        }
        Ok((scored > 0).then(|| correct as f64 / scored as f64))
    }

    /// How often each feature is used as a split, summed over trees.
    pub fn split_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.feature_names.len()];
        for tree in &self.trees {
            tree.for_each_split(&mut |f, _| counts[f] += 1);
        }
        counts
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: ForestModel = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", model.format_version)));
        }
        if model.trees.len() != model.params.n_trees {
            return Err(Error::Schema("tree count does not match params.n_trees".into()));
        }
        Ok(model)
    }
}
