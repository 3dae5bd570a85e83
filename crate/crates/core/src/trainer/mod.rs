//! Embedding training: contrastive losses, Adam, the plateau scheduler
//! and the epoch/batch loop.
//!
//! Determinism contract: one ChaCha8 stream seeded from `TrainConfig::seed`
//! drives, in order, (1) the embedding initialization, (2) each epoch's
//! anchor shuffle, then (3) the per-anchor positive/negative draws in
//! batch order. Gradient contributions are reduced in anchor order and
//! applied in ascending row order, so a given seed reproduces the
//! embedding matrix bit for bit, independent of thread count.

mod adam;
mod embedding;
mod loss;
mod scheduler;

pub use adam::{AdamHyper, AdamState};
pub use embedding::EmbeddingMatrix;
pub use loss::{
    log_sigmoid, loss_aggregate, loss_hybrid, loss_individual, reg_penalty_row, sigmoid,
    LossOutput,
};
pub use scheduler::{PlateauScheduler, SchedulerConfig};

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::mat::Mat;
use crate::rng;
use crate::sampler::{SamplerError, SamplingTables};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("positive and negative sample sets must be non-empty")]
    EmptySampleSet,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("row {row} out of range for {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("embedding dimension must be at least 2, got {0}")]
    BadDimension(usize),
    #[error("embedding contains non-finite values")]
    NonFiniteEmbedding,
    #[error("no trainable anchors: every anchor lacks positive or negative support")]
    NoTrainableAnchors,
    #[error("non-finite loss at epoch {epoch}, batch {batch} (anchor {anchor})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        anchor: usize,
    },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("embedding file is malformed")]
    BadEmbeddingFile,
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which contrastive objective drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    IndividualSigmoid,
    AggregateSigmoid,
    SigmoidSoftmax,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::IndividualSigmoid => "individual-sigmoid",
            LossKind::AggregateSigmoid => "aggregate-sigmoid",
            LossKind::SigmoidSoftmax => "sigmoid-softmax",
        }
    }

    pub fn parse(name: &str) -> Option<LossKind> {
        match name {
            "individual-sigmoid" => Some(LossKind::IndividualSigmoid),
            "aggregate-sigmoid" => Some(LossKind::AggregateSigmoid),
            "sigmoid-softmax" => Some(LossKind::SigmoidSoftmax),
            _ => None,
        }
    }
}

/// How embedding norms are kept near the unit sphere: the soft penalty,
/// hard re-normalization of updated rows after each step, or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormMode {
    #[default]
    Penalty,
    HardRenorm,
    Both,
}

impl NormMode {
    pub fn name(&self) -> &'static str {
        match self {
            NormMode::Penalty => "penalty",
            NormMode::HardRenorm => "hard-renorm",
            NormMode::Both => "both",
        }
    }

    pub fn parse(name: &str) -> Option<NormMode> {
        match name {
            "penalty" => Some(NormMode::Penalty),
            "hard-renorm" => Some(NormMode::HardRenorm),
            "both" => Some(NormMode::Both),
            _ => None,
        }
    }

    fn penalty(&self) -> bool {
        matches!(self, NormMode::Penalty | NormMode::Both)
    }

    fn renorm(&self) -> bool {
        matches!(self, NormMode::HardRenorm | NormMode::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub dim: usize,
    pub epochs: usize,
    /// Sample budget per optimizer step: anchors are packed whole into a
    /// batch until their drawn positives plus negatives would exceed this.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub num_pos: usize,
    pub num_neg: usize,
    pub lambda: f64,
    pub norm_mode: NormMode,
    pub scheduler: SchedulerConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::IndividualSigmoid,
            dim: 16,
            epochs: 30,
            batch_size: 128,
            learning_rate: 0.001,
            num_pos: 5,
            num_neg: 20,
            lambda: 0.001,
            norm_mode: NormMode::Penalty,
            scheduler: SchedulerConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |message: &str| Err(TrainError::BadConfig(message.to_string()));
        if self.dim < 2 {
            return fail("dim must be at least 2");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return fail("learning_rate must be positive");
        }
        if self.num_pos == 0 || self.num_neg == 0 {
            return fail("num_pos and num_neg must be at least 1");
        }
        if self.lambda < 0.0 {
            return fail("lambda must be non-negative");
        }
        Ok(())
    }

    /// Whole anchors per optimizer step under the sample budget.
    pub fn anchors_per_batch(&self) -> usize {
        (self.batch_size / (self.num_pos + self.num_neg)).max(1)
    }
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub total_loss: f64,
    pub positive_loss: f64,
    pub negative_loss: f64,
    pub reg_loss: f64,
    pub learning_rate: f64,
    pub mean_norm: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    /// Anchors excluded up front for missing positive or negative support.
    pub skipped_anchors: Vec<usize>,
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record([
            "epoch",
            "total_loss",
            "positive_loss",
            "negative_loss",
            "reg_loss",
            "learning_rate",
            "mean_norm",
        ])?;
        for row in &self.epochs {
            writer.write_record(&[
                row.epoch.to_string(),
                format!("{}", row.total_loss),
                format!("{}", row.positive_loss),
                format!("{}", row.negative_loss),
                format!("{}", row.reg_loss),
                format!("{}", row.learning_rate),
                format!("{}", row.mean_norm),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn evaluate_loss(
    kind: LossKind,
    anchor: &[f64],
    positives: &[&[f64]],
    negatives: &[&[f64]],
) -> Result<LossOutput, TrainError> {
    match kind {
        LossKind::IndividualSigmoid => loss_individual(anchor, positives, negatives),
        LossKind::AggregateSigmoid => loss_aggregate(anchor, positives, negatives),
        LossKind::SigmoidSoftmax => loss_hybrid(anchor, positives, negatives),
    }
}

fn accumulate(grads: &mut BTreeMap<usize, Vec<f64>>, row: usize, scale: f64, grad: &[f64]) {
    let entry = grads
        .entry(row)
        .or_insert_with(|| vec![0.0; grad.len()]);
    for (acc, &g) in entry.iter_mut().zip(grad) {
        *acc += scale * g;
    }
}

/// Learns the embedding matrix from the sampling tables. See the module
/// docs for the determinism contract.
pub fn train(
    tables: &SamplingTables,
    config: &TrainConfig,
) -> Result<(EmbeddingMatrix, TrainLog), TrainError> {
    config.validate()?;
    let n = tables.n_assets();
    let skipped = tables.anchors_without_support();
    let trainable: Vec<usize> = (0..n).filter(|i| !skipped.contains(i)).collect();
    if trainable.is_empty() {
        return Err(TrainError::NoTrainableAnchors);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.dim;
    let mut vectors = Mat::zeros(n, dim);
    let span = 1.0 / (dim as f64).sqrt();
    for row in 0..n {
        let target = vectors.row_mut(row);
        for value in target.iter_mut() {
            *value = (2.0 * rng::unit_f64(&mut rng) - 1.0) * span;
        }
        let norm = target.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for value in target.iter_mut() {
                *value /= norm;
            }
        }
    }

    let hyper = AdamHyper::default();
    let mut adam = AdamState::new(n, dim);
    let mut scheduler = PlateauScheduler::new(config.learning_rate, config.scheduler);
    let mut log = TrainLog {
        skipped_anchors: skipped,
        ..TrainLog::default()
    };
    let anchors_per_batch = config.anchors_per_batch();
    let mut order = trainable;

    for epoch in 0..config.epochs {
        rng::shuffle(&mut rng, &mut order);
        let lr = scheduler.learning_rate();
        let mut pos_sum = 0.0;
        let mut neg_sum = 0.0;
        let mut reg_sum = 0.0;
        for (batch_index, batch) in order.chunks(anchors_per_batch).enumerate() {
            let batch_scale = 1.0 / batch.len() as f64;
            let mut grads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for &anchor in batch {
                let (pos_idx, neg_idx) =
                    tables.draw(anchor, config.num_pos, config.num_neg, &mut rng)?;
                let positives: Vec<&[f64]> = pos_idx.iter().map(|&j| vectors.row(j)).collect();
                let negatives: Vec<&[f64]> = neg_idx.iter().map(|&j| vectors.row(j)).collect();
                let out = evaluate_loss(config.loss, vectors.row(anchor), &positives, &negatives)?;
                if !out.total.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        batch: batch_index,
                        anchor,
                    });
                }
                pos_sum += out.positive_part;
                neg_sum += out.negative_part;
                accumulate(&mut grads, anchor, batch_scale, &out.grad_anchor);
                for (&j, g) in pos_idx.iter().zip(&out.grad_positives) {
                    accumulate(&mut grads, j, batch_scale, g);
                }
                for (&j, g) in neg_idx.iter().zip(&out.grad_negatives) {
                    accumulate(&mut grads, j, batch_scale, g);
                }
            }
            if config.norm_mode.penalty() {
                let touched: Vec<usize> = grads.keys().copied().collect();
                for row in touched {
                    let (loss, grad) = reg_penalty_row(vectors.row(row), config.lambda);
                    reg_sum += loss;
                    accumulate(&mut grads, row, 1.0, &grad);
                }
            }
            adam.apply(&mut vectors, &grads, lr, &hyper)?;
            if config.norm_mode.renorm() {
                for &row in grads.keys() {
                    let target = vectors.row_mut(row);
                    let norm = target.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        for value in target.iter_mut() {
                            *value /= norm;
                        }
                    }
                }
            }
        }
        let anchors_seen = order.len() as f64;
        let mean_norm = (0..n)
            .map(|i| vectors.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum::<f64>()
            / n as f64;
        let positive_loss = pos_sum / anchors_seen;
        let negative_loss = neg_sum / anchors_seen;
        let reg_loss = reg_sum / anchors_seen;
        log.epochs.push(EpochStats {
            epoch,
            total_loss: positive_loss + negative_loss + reg_loss,
            positive_loss,
            negative_loss,
            reg_loss,
            learning_rate: lr,
            mean_norm,
        });
        scheduler.step(positive_loss);
    }

    let embedding = EmbeddingMatrix::new(tables.asset_ids().to_vec(), vectors)?;
    Ok((embedding, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{build_tables, TestConfig};
    use crate::similarity::{CooccurrenceMatrix, WindowConfig};

    /// 6-asset matrix with an obvious pair structure: (0,1), (2,3), (4,5)
    /// heavily co-occur; remaining mass spread thin.
    fn paired_tables() -> SamplingTables {
        let rows = vec![
            vec![0, 100, 6, 5, 5, 4],
            vec![100, 0, 6, 5, 5, 4],
            vec![6, 5, 0, 100, 5, 4],
            vec![5, 6, 100, 0, 5, 4],
            vec![5, 5, 6, 4, 0, 100],
            vec![4, 5, 5, 6, 100, 0],
        ];
        let flat: Vec<u32> = rows.into_iter().flatten().collect();
        let ids = (0..6).map(|i| format!("A{i}")).collect();
        let cooc =
            CooccurrenceMatrix::from_parts(flat, 60, WindowConfig::new(2, 1, 2), ids);
        build_tables(&cooc, &TestConfig::default()).unwrap()
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            dim: 4,
            epochs: 5,
            batch_size: 10,
            num_pos: 2,
            num_neg: 3,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn same_seed_reproduces_bitwise() {
        let tables = paired_tables();
        let config = quick_config();
        let (a, _) = train(&tables, &config).unwrap();
        let (b, _) = train(&tables, &config).unwrap();
        for i in 0..a.n_assets() {
            for (x, y) in a.vector(i).iter().zip(b.vector(i)) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn different_seed_differs() {
        let tables = paired_tables();
        let mut config = quick_config();
        let (a, _) = train(&tables, &config).unwrap();
        config.seed = 12;
        let (b, _) = train(&tables, &config).unwrap();
        assert_ne!(a.vectors().data(), b.vectors().data());
    }

    #[test]
    fn hard_renorm_keeps_rows_unit() {
        let tables = paired_tables();
        let config = TrainConfig {
            norm_mode: NormMode::HardRenorm,
            ..quick_config()
        };
        let (emb, _) = train(&tables, &config).unwrap();
        for i in 0..emb.n_assets() {
            let norm = emb.row_norm(i);
            assert!((norm - 1.0).abs() <= 1e-6, "row {i} norm {norm}");
        }
    }

    #[test]
    fn no_trainable_anchors_is_an_error() {
        // uniform counts land every p-value in the middle band, so the
        // positive support is empty for all anchors
        let mut flat = vec![24u32; 36];
        for i in 0..6 {
            flat[i * 6 + i] = 0;
        }
        let ids = (0..6).map(|i| format!("A{i}")).collect();
        let cooc = CooccurrenceMatrix::from_parts(flat, 60, WindowConfig::new(2, 1, 2), ids);
        let tables = build_tables(&cooc, &TestConfig::default()).unwrap();
        assert!(matches!(
            train(&tables, &quick_config()),
            Err(TrainError::NoTrainableAnchors)
        ));
    }

    #[test]
    fn log_has_one_entry_per_epoch_and_positive_losses() {
        let tables = paired_tables();
        let config = quick_config();
        let (_, log) = train(&tables, &config).unwrap();
        assert_eq!(log.epochs.len(), config.epochs);
        for stats in &log.epochs {
            assert!(stats.positive_loss >= 0.0);
            assert!(stats.negative_loss >= 0.0);
            assert!(stats.total_loss.is_finite());
        }
    }

    #[test]
    fn training_pulls_pairs_together() {
        let tables = paired_tables();
        let config = TrainConfig {
            dim: 8,
            epochs: 40,
            batch_size: 5, // one anchor per step
            num_pos: 2,
            num_neg: 4,
            seed: 3,
            ..TrainConfig::default()
        };
        let (emb, _) = train(&tables, &config).unwrap();
        let cos = |i: usize, j: usize| {
            let a = emb.vector(i);
            let b = emb.vector(j);
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            dot / (emb.row_norm(i) * emb.row_norm(j))
        };
        let paired = (cos(0, 1) + cos(2, 3) + cos(4, 5)) / 3.0;
        let unpaired = (cos(0, 2) + cos(0, 4) + cos(2, 5)) / 3.0;
        assert!(
            paired > unpaired + 0.2,
            "paired {paired} vs unpaired {unpaired}"
        );
    }

    #[test]
    fn sparse_update_only_touches_batch_rows() {
        // only anchor 0 is trainable: one batch of one anchor with one
        // positive and one negative draw touches at most 3 of 6 rows; the
        // rest must still equal their initialization bit for bit
        let mut flat = vec![24u32; 36];
        for i in 0..6 {
            flat[i * 6 + i] = 0;
        }
        flat[1] = 100; // row 0: [0, 100, 1, 1, 1, 1]
        flat[2..6].fill(1);
        let ids = (0..6).map(|i| format!("A{i}")).collect();
        let cooc = CooccurrenceMatrix::from_parts(flat, 60, WindowConfig::new(2, 1, 2), ids);
        let tables = build_tables(&cooc, &TestConfig::default()).unwrap();
        assert_eq!(tables.anchors_without_support(), vec![1, 2, 3, 4, 5]);

        let config = TrainConfig {
            dim: 4,
            epochs: 1,
            batch_size: 2,
            num_pos: 1,
            num_neg: 1,
            seed: 5,
            ..TrainConfig::default()
        };
        let (emb, log) = train(&tables, &config).unwrap();
        assert_eq!(log.skipped_anchors, vec![1, 2, 3, 4, 5]);

        // replay the initialization stream (N * dim uniforms, row-major)
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let span = 1.0 / (config.dim as f64).sqrt();
        let mut init = Mat::zeros(6, config.dim);
        for row in 0..6 {
            let target = init.row_mut(row);
            for value in target.iter_mut() {
                *value = (2.0 * crate::rng::unit_f64(&mut rng) - 1.0) * span;
            }
            let norm = target.iter().map(|x| x * x).sum::<f64>().sqrt();
            for value in target.iter_mut() {
                *value /= norm;
            }
        }
        let untouched = (0..6)
            .filter(|&i| emb.vector(i) == init.row(i))
            .count();
        assert!(untouched >= 3, "expected at least 3 untouched rows");
        assert_ne!(emb.vector(0), init.row(0), "anchor row must move");
    }

    #[test]
    fn bad_config_is_rejected() {
        let tables = paired_tables();
        for config in [
            TrainConfig { dim: 1, ..quick_config() },
            TrainConfig { epochs: 0, ..quick_config() },
            TrainConfig { learning_rate: 0.0, ..quick_config() },
            TrainConfig { num_pos: 0, ..quick_config() },
        ] {
            assert!(matches!(
                train(&tables, &config),
                Err(TrainError::BadConfig(_))
            ));
        }
    }

    #[test]
    fn anchors_per_batch_budget() {
        let config = TrainConfig {
            batch_size: 128,
            num_pos: 5,
            num_neg: 20,
            ..TrainConfig::default()
        };
        assert_eq!(config.anchors_per_batch(), 5);
        let tiny = TrainConfig {
            batch_size: 3,
            num_pos: 5,
            num_neg: 20,
            ..TrainConfig::default()
        };
        assert_eq!(tiny.anchors_per_batch(), 1);
    }
}
