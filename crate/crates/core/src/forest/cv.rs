use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{train, Dataset, ForestParams};
use crate::domain::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvMode {
    /// Random class-stratified folds; overlapping windows may sit on both sides.
    StratifiedShuffled,
    /// Contiguous time blocks; training windows overlapping a test window are dropped.
    Blocked,
}

impl std::str::FromStr for CvMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stratified" | "stratified_shuffled" => Ok(CvMode::StratifiedShuffled),
            "blocked" => Ok(CvMode::Blocked),
            other => Err(Error::Parameter(format!("unknown cv mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub k: usize,
    pub mode: CvMode,
    /// Blocked mode: training samples whose start time lies within this many
    /// seconds of a test sample's start are excluded (one window length).
    pub purge_span_s: f64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self { k: 5, mode: CvMode::StratifiedShuffled, purge_span_s: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub mode: CvMode,
    pub k: usize,
    pub seed: u64,
    pub params: ForestParams,
    pub class_labels: Vec<Label>,
    pub fold_sizes: Vec<usize>,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Mean over folds of the row-normalised confusion matrix (rows = truth).
    /// Rows absent from a fold's test set are skipped for that fold.
    pub confusion: Vec<Vec<f64>>,
}

fn fold_assignment(dataset: &Dataset, k: usize, mode: CvMode, seed: u64) -> Vec<Vec<usize>> {
    let mut folds = vec![Vec::new(); k];
    match mode {
        CvMode::StratifiedShuffled => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut next = 0;
            for label in dataset.class_labels() {
                let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == label).collect();
                members.shuffle(&mut rng);
                for i in members {
                    folds[next % k].push(i);
                    next += 1;
                }
            }
            for fold in &mut folds {
                fold.sort_unstable();
            }
        }
        CvMode::Blocked => {
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.sort_by(|&a, &b| dataset.times[a].total_cmp(&dataset.times[b]).then(a.cmp(&b)));
            let n = order.len();
            for (f, fold) in folds.iter_mut().enumerate() {
                *fold = order[f * n / k..(f + 1) * n / k].to_vec();
            }
        }
    }
    folds
}

fn training_indices(dataset: &Dataset, test: &[usize], options: &CvOptions) -> Vec<usize> {
    let mut in_test = vec![false; dataset.len()];
    for &i in test {
        in_test[i] = true;
    }
    (0..dataset.len())
        .filter(|&i| !in_test[i])
        .filter(|&i| {
            options.mode != CvMode::Blocked
                || test.iter().all(|&j| (dataset.times[i] - dataset.times[j]).abs() >= options.purge_span_s)
        })
        .collect()
}

/// k-fold cross-validation of a forest on one subject's windows.
pub fn cross_validate(dataset: &Dataset, options: &CvOptions, params: &ForestParams, seed: u64) -> Result<CvReport> {
    let k = options.k;
    if k < 2 {
        return Err(Error::Parameter(format!("k = {k} must be at least 2")));
    }
    if dataset.len() < k {
        return Err(Error::Parameter(format!("k = {k} exceeds dataset size {}", dataset.len())));
    }
    let classes = dataset.class_labels();
    let n_classes = classes.len();
    let folds = fold_assignment(dataset, k, options.mode, seed);

    let mut fold_accuracies = Vec::with_capacity(k);
    let mut row_sums = vec![vec![0.0; n_classes]; n_classes];
    let mut row_folds = vec![0usize; n_classes];
    for (f, test) in folds.iter().enumerate() {
        let training = dataset.subset(&training_indices(dataset, test, options));
        let present = training.class_labels();
        if let Some(missing) = classes.iter().find(|c| !present.contains(c)) {
            return Err(Error::Fold { fold: f, reason: format!("class {missing} absent from training split") });
        }
        let fold_seed = seed ^ (f as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let model = train(&training, params, fold_seed)?;

        let mut counts = vec![vec![0u32; n_classes]; n_classes];
        let mut correct = 0usize;
        for &i in test {
            let predicted = model.predict_values(&dataset.rows[i])?.label;
            let truth = classes.binary_search(&dataset.labels[i]).expect("class listed");
            let guess = classes.binary_search(&predicted).expect("model classes come from training");
            counts[truth][guess] += 1;
            if truth == guess {
                correct += 1;
            }
        }
        fold_accuracies.push(correct as f64 / test.len() as f64);
        for (r, row) in counts.iter().enumerate() {
            let total: u32 = row.iter().sum();
            if total == 0 {
                continue;
            }
            row_folds[r] += 1;
            for (c, &v) in row.iter().enumerate() {
                row_sums[r][c] += f64::from(v) / f64::from(total);
            }
        }
    }
    let confusion = row_sums
        .into_iter()
        .zip(&row_folds)
        .map(|(row, &nf)| row.into_iter().map(|v| if nf > 0 { v / nf as f64 } else { 0.0 }).collect())
        .collect();
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / k as f64;
    Ok(CvReport {
        mode: options.mode,
        k,
        seed,
        params: *params,
        class_labels: classes,
        fold_sizes: folds.iter().map(Vec::len).collect(),
        fold_accuracies,
        mean_accuracy,
        confusion,
    })
}
