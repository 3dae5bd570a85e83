//! Sector classification on embedding vectors: stratified k-fold
//! cross-validation with a from-scratch multinomial logistic regression
//! trained by full-batch gradient descent.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use super::EvalError;
use crate::mat::Mat;
use crate::panel::AssetLabel;
use crate::rng::shuffle;
use crate::trainer::EmbeddingMatrix;

#[derive(Debug, Clone)]
pub struct ClassifyConfig {
    pub folds: usize,
    pub seed: u64,
    /// Gradient-descent iteration cap.
    pub max_iters: usize,
    /// L2 weight decay on the non-bias weights.
    pub weight_decay: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            folds: 5,
            seed: 0,
            max_iters: 2000,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FoldScore {
    pub fold: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone)]
pub struct ClassificationReport {
    pub folds: Vec<FoldScore>,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
    /// Class names in index order.
    pub classes: Vec<String>,
    /// Classes removed for having fewer members than folds.
    pub dropped_classes: Vec<String>,
    /// (asset_id, fold) for every asset that entered the evaluation.
    pub fold_assignments: Vec<(String, usize)>,
    pub config: ClassifyConfig,
}

/// Features for classification: one row per sample.
pub struct LabeledFeatures {
    pub features: Mat,
    pub class_of: Vec<usize>,
    pub classes: Vec<String>,
    pub sample_ids: Vec<String>,
    pub dropped_classes: Vec<String>,
}

/// Pairs embedding rows with sector labels, dropping classes that cannot
/// populate every fold.
pub fn labeled_features(
    embedding: &EmbeddingMatrix,
    labels: &BTreeMap<String, AssetLabel>,
    folds: usize,
) -> Result<LabeledFeatures, EvalError> {
    let rows: Vec<(String, usize, String)> = embedding
        .asset_ids()
        .iter()
        .enumerate()
        .filter_map(|(i, id)| {
            labels
                .get(id)
                .map(|label| (id.clone(), i, label.sector.clone()))
        })
        .collect();
    if rows.is_empty() {
        return Err(EvalError::NoLabels);
    }
    let mut class_counts: BTreeMap<String, usize> = BTreeMap::new();
    for (_, _, sector) in &rows {
        *class_counts.entry(sector.clone()).or_insert(0) += 1;
    }
    let mut classes = Vec::new();
    let mut dropped_classes = Vec::new();
    for (sector, count) in &class_counts {
        if *count >= folds {
            classes.push(sector.clone());
        } else {
            dropped_classes.push(sector.clone());
        }
    }
    if classes.len() < 2 {
        return Err(EvalError::TooFewClasses(classes.len()));
    }
    let class_index: BTreeMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(k, name)| (name.as_str(), k))
        .collect();
    let mut features = Vec::new();
    let mut class_of = Vec::new();
    let mut sample_ids = Vec::new();
    for (id, row, sector) in rows {
        if let Some(&k) = class_index.get(sector.as_str()) {
            features.push(embedding.vector(row).to_vec());
            class_of.push(k);
            sample_ids.push(id);
        }
    }
    Ok(LabeledFeatures {
        features: Mat::from_rows(&features),
        class_of,
        classes,
        sample_ids,
        dropped_classes,
    })
}

/// Seeded stratified fold assignment: within each class the members are
/// shuffled, then dealt into folds front-loading the remainder. Members
/// are ordered by id before the shuffle, so the assignment depends on
/// asset identity, not input position.
pub fn stratified_folds(
    sample_ids: &[String],
    class_of: &[usize],
    num_classes: usize,
    folds: usize,
    seed: u64,
) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; class_of.len()];
    for class in 0..num_classes {
        let mut members: Vec<usize> = (0..class_of.len())
            .filter(|&i| class_of[i] == class)
            .collect();
        members.sort_by(|&a, &b| sample_ids[a].cmp(&sample_ids[b]));
        shuffle(&mut rng, &mut members);
        let base = members.len() / folds;
        let extra = members.len() % folds;
        let mut cursor = 0;
        for fold in 0..folds {
            let size = base + usize::from(fold < extra);
            for &member in &members[cursor..cursor + size] {
                assignment[member] = fold;
            }
            cursor += size;
        }
    }
    assignment
}

/// Multinomial logistic regression weights: (d+1) x K with the bias in the
/// last row. Features are standardized per dimension (train statistics)
/// and scaled by 1/sqrt(d) so a unit step size is stable for any feature
/// family.
pub struct LogisticModel {
    weights: Mat,
    means: Vec<f64>,
    scales: Vec<f64>,
    num_classes: usize,
}

impl LogisticModel {
    pub fn fit(
        features: &Mat,
        class_of: &[usize],
        train_rows: &[usize],
        num_classes: usize,
        config: &ClassifyConfig,
    ) -> LogisticModel {
        let dim = features.cols();
        let n = train_rows.len() as f64;
        let mut means = vec![0.0; dim];
        for &row in train_rows {
            for (m, &v) in means.iter_mut().zip(features.row(row)) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut scales = vec![0.0; dim];
        for &row in train_rows {
            for (s, (&v, &m)) in scales.iter_mut().zip(features.row(row).iter().zip(&means)) {
                *s += (v - m) * (v - m);
            }
        }
        let dim_scale = (dim as f64).sqrt();
        for s in &mut scales {
            let std = (*s / n).sqrt();
            // zero-variance dimensions are muted entirely
            *s = if std > 0.0 { 1.0 / (std * dim_scale) } else { 0.0 };
        }

        let transformed: Vec<Vec<f64>> = train_rows
            .iter()
            .map(|&row| standardize(features.row(row), &means, &scales))
            .collect();

        let mut weights = Mat::zeros(dim + 1, num_classes);
        let mut grad = Mat::zeros(dim + 1, num_classes);
        let mut probs = vec![0.0; num_classes];
        for _ in 0..config.max_iters {
            grad.data_mut().fill(0.0);
            for (x, &row) in transformed.iter().zip(train_rows) {
                softmax_probs(&weights, x, &mut probs);
                let target = class_of[row];
                for (k, &prob) in probs.iter().enumerate() {
                    let delta = (prob - f64::from(k == target)) / n;
                    for (d, &xv) in x.iter().enumerate() {
                        grad.set(d, k, grad.get(d, k) + delta * xv);
                    }
                    grad.set(dim, k, grad.get(dim, k) + delta);
                }
            }
            // decay on non-bias weights
            for d in 0..dim {
                for k in 0..num_classes {
                    grad.set(d, k, grad.get(d, k) + config.weight_decay * weights.get(d, k));
                }
            }
            let mut max_grad = 0.0f64;
            for value in grad.data() {
                max_grad = max_grad.max(value.abs());
            }
            for (w, g) in weights.data_mut().iter_mut().zip(grad.data()) {
                *w -= g;
            }
            if max_grad < 1e-7 {
                break;
            }
        }
        LogisticModel {
            weights,
            means,
            scales,
            num_classes,
        }
    }

    pub fn predict(&self, features: &[f64]) -> usize {
        let x = standardize(features, &self.means, &self.scales);
        let mut probs = vec![0.0; self.num_classes];
        softmax_probs(&self.weights, &x, &mut probs);
        let mut best = 0;
        for k in 1..self.num_classes {
            if probs[k] > probs[best] {
                best = k;
            }
        }
        best
    }
}

fn standardize(row: &[f64], means: &[f64], scales: &[f64]) -> Vec<f64> {
    row.iter()
        .zip(means.iter().zip(scales))
        .map(|(&v, (&m, &s))| (v - m) * s)
        .collect()
}

fn softmax_probs(weights: &Mat, x: &[f64], probs: &mut [f64]) {
    let dim = x.len();
    for (k, p) in probs.iter_mut().enumerate() {
        let mut logit = weights.get(dim, k); // bias
        for (d, &xv) in x.iter().enumerate() {
            logit += weights.get(d, k) * xv;
        }
        *p = logit;
    }
    let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for p in probs.iter_mut() {
        *p = (*p - max).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
}

/// Reorders samples by id so the report is invariant under permutations
/// of the embedding's row order.
fn canonicalize_by_id(data: &mut LabeledFeatures) {
    let mut order: Vec<usize> = (0..data.sample_ids.len()).collect();
    order.sort_by(|&a, &b| data.sample_ids[a].cmp(&data.sample_ids[b]));
    let features: Vec<Vec<f64>> = order.iter().map(|&i| data.features.row(i).to_vec()).collect();
    data.features = Mat::from_rows(&features);
    data.class_of = order.iter().map(|&i| data.class_of[i]).collect();
    data.sample_ids = order.iter().map(|&i| data.sample_ids[i].clone()).collect();
}

/// Macro F1 over `classes`: unweighted mean of per-class F1, counting
/// classes absent from the test set as zero.
pub fn macro_f1(truth: &[usize], predicted: &[usize], num_classes: usize) -> f64 {
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let mut total = 0.0;
    for k in 0..num_classes {
        let denom = 2 * tp[k] + fp[k] + fn_[k];
        if denom > 0 {
            total += 2.0 * tp[k] as f64 / denom as f64;
        }
    }
    total / num_classes as f64
}

/// Stratified k-fold sector classification over the embedding vectors.
pub fn classify_sectors(
    embedding: &EmbeddingMatrix,
    labels: &BTreeMap<String, AssetLabel>,
    config: &ClassifyConfig,
) -> Result<ClassificationReport, EvalError> {
    if config.folds < 2 {
        return Err(EvalError::BadFoldCount(config.folds));
    }
    let mut data = labeled_features(embedding, labels, config.folds)?;
    canonicalize_by_id(&mut data);
    let assignment = stratified_folds(
        &data.sample_ids,
        &data.class_of,
        data.classes.len(),
        config.folds,
        config.seed,
    );
    let mut folds = Vec::with_capacity(config.folds);
    for fold in 0..config.folds {
        let train_rows: Vec<usize> = (0..data.class_of.len())
            .filter(|&i| assignment[i] != fold)
            .collect();
        let test_rows: Vec<usize> = (0..data.class_of.len())
            .filter(|&i| assignment[i] == fold)
            .collect();
        let model = LogisticModel::fit(
            &data.features,
            &data.class_of,
            &train_rows,
            data.classes.len(),
            config,
        );
        let truth: Vec<usize> = test_rows.iter().map(|&i| data.class_of[i]).collect();
        let predicted: Vec<usize> = test_rows
            .iter()
            .map(|&i| model.predict(data.features.row(i)))
            .collect();
        let hits = truth
            .iter()
            .zip(&predicted)
            .filter(|(t, p)| t == p)
            .count();
        folds.push(FoldScore {
            fold,
            accuracy: hits as f64 / truth.len().max(1) as f64,
            macro_f1: macro_f1(&truth, &predicted, data.classes.len()),
        });
    }
    let mean_accuracy = folds.iter().map(|f| f.accuracy).sum::<f64>() / folds.len() as f64;
    let mean_macro_f1 = folds.iter().map(|f| f.macro_f1).sum::<f64>() / folds.len() as f64;
    Ok(ClassificationReport {
        mean_accuracy,
        mean_macro_f1,
        folds,
        classes: data.classes,
        dropped_classes: data.dropped_classes,
        fold_assignments: data
            .sample_ids
            .iter()
            .cloned()
            .zip(assignment.iter().copied())
            .collect(),
        config: config.clone(),
    })
}
