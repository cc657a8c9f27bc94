use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A fitted CART node. Samples with `value <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        /// Training samples per class, indexed like the model's class list.
        class_counts: Vec<u32>,
    },
}

impl TreeNode {
    pub fn leaf_for(&self, row: &[f64]) -> &[u32] {
        let mut node = self;
        loop {
            match node {
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if row[*feature] <= *threshold { left } else { right };
                }
                TreeNode::Leaf { class_counts } => return class_counts,
            }
        }
    }

    /// Majority class index of the reached leaf; ties go to the lower index.
    pub fn vote(&self, row: &[f64]) -> usize {
        majority(self.leaf_for(row))
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
            TreeNode::Leaf { .. } => 0,
        }
    }

    pub fn for_each_split(&self, f: &mut impl FnMut(usize, f64)) {
        if let TreeNode::Split { feature, threshold, left, right } = self {
            f(*feature, *threshold);
            left.for_each_split(f);
            right.for_each_split(f);
        }
    }

    pub fn for_each_leaf(&self, f: &mut impl FnMut(&[u32])) {
        match self {
            TreeNode::Split { left, right, .. } => {
                left.for_each_leaf(f);
                right.for_each_leaf(f);
            }
            TreeNode::Leaf { class_counts } => f(class_counts),
        }
    }
}

pub(crate) fn majority(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

pub(crate) struct TreeBuilder<'a> {
    pub rows: &'a [Vec<f64>],
    /// Class index per row.
    pub classes: &'a [usize],
    pub n_classes: usize,
    pub max_depth: usize,
    pub min_leaf_size: usize,
    pub features_per_split: usize,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl TreeBuilder<'_> {
    /// Grows a tree on `sample` (row indices, repeats allowed).
    pub fn grow<R: Rng>(&self, sample: Vec<usize>, rng: &mut R) -> TreeNode {
        self.node(sample, 0, rng)
    }

    fn counts(&self, sample: &[usize]) -> Vec<u32> {
        let mut counts = vec![0u32; self.n_classes];
        for &i in sample {
            counts[self.classes[i]] += 1;
        }
        counts
    }

    fn node<R: Rng>(&self, sample: Vec<usize>, depth: usize, rng: &mut R) -> TreeNode {
        let counts = self.counts(&sample);
        let n = sample.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.max_depth || n < 2 * self.min_leaf_size {
            return TreeNode::Leaf { class_counts: counts };
        }
        let n_features = self.rows[0].len();
        let mut features = index::sample(rng, n_features, self.features_per_split.min(n_features)).into_vec();
        features.sort_unstable();

        let parent = weighted_gini(&counts, n);
        let mut best: Option<Candidate> = None;
        for &feature in &features {
            if let Some(c) = self.best_threshold(&sample, feature) {
                if c.impurity < best.as_ref().map_or(parent, |b| b.impurity) {
                    best = Some(c);
                }
            }
        }
        let Some(split) = best else {
            return TreeNode::Leaf { class_counts: counts };
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            sample.into_iter().partition(|&i| self.rows[i][split.feature] <= split.threshold);
        TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(self.node(left, depth + 1, rng)),
            right: Box::new(self.node(right, depth + 1, rng)),
        }
    }

    /// Lowest-impurity midpoint threshold for one feature, scanning thresholds
    /// in increasing order so the lowest one wins ties.
    fn best_threshold(&self, sample: &[usize], feature: usize) -> Option<Candidate> {
        let mut pairs: Vec<(f64, usize)> = sample.iter().map(|&i| (self.rows[i][feature], self.classes[i])).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = pairs.len();
        let mut left = vec![0u32; self.n_classes];
        let mut right = vec![0u32; self.n_classes];
        for &(_, c) in &pairs {
            right[c] += 1;
        }
        let mut best: Option<Candidate> = None;
        for i in 0..n - 1 {
            let (v, c) = pairs[i];
            left[c] += 1;
            right[c] -= 1;
            let next = pairs[i + 1].0;
            let n_left = i + 1;
            if !(v < next) || n_left < self.min_leaf_size || n - n_left < self.min_leaf_size {
                continue;
            }
            let impurity = weighted_gini(&left, n_left) + weighted_gini(&right, n - n_left);
            if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                let mut threshold = 0.5 * (v + next);
                if threshold >= next {
                    threshold = v;
                }
                best = Some(Candidate { feature, threshold, impurity });
            }
        }
        best
    }
}

/// `n · gini(counts)`, the node's contribution to the split impurity.
fn weighted_gini(counts: &[u32], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let sum_sq: f64 = counts.iter().map(|&c| f64::from(c) * f64::from(c)).sum();
    n as f64 - sum_sq / n as f64
}
