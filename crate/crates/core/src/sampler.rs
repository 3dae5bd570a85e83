//! Positive/negative sampling distributions derived from the co-occurrence
//! matrix via a one-proportion z-test.
//!
//! For every ordered pair (anchor i, asset j) the observed co-occurrence
//! proportion is tested against the chance rate `p0 = 1/N`. Pairs whose
//! p-value falls below `alpha_pos` feed the positive distribution
//! (weighted by count); pairs above `alpha_neg` feed the negative
//! distribution (weighted by distance from the anchor's row maximum). The
//! gap between the thresholds leaves a band that is never sampled.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::mat::Mat;
use crate::rng::unit_f64;
use crate::similarity::CooccurrenceMatrix;

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error("thresholds must satisfy 0 < alpha_pos < alpha_neg < 1 (got {alpha_pos}, {alpha_neg})")]
    BadThresholds { alpha_pos: f64, alpha_neg: f64 },
    #[error("sampling tables need at least 3 assets, found {0}")]
    TooFewAssets(usize),
    #[error("anchor {0} has no co-occurrences (zero trial count)")]
    EmptyAnchor(usize),
    #[error("count {count} exceeds trial total {total}")]
    CountExceedsTotal { count: u64, total: u64 },
    #[error("chance rate must lie in (0, 1), got {0}")]
    BadChanceRate(f64),
    #[error("anchor index {0} out of range")]
    AnchorOutOfRange(usize),
    #[error("anchor {anchor} has empty {side} support; skip it")]
    EmptySupport { anchor: usize, side: &'static str },
    #[error("histogram needs at least 1 bin")]
    BadBinCount,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Significance thresholds for the two sampling regions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestConfig {
    pub alpha_pos: f64,
    pub alpha_neg: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            alpha_pos: 0.05,
            alpha_neg: 0.3,
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let ok = self.alpha_pos > 0.0
            && self.alpha_pos < self.alpha_neg
            && self.alpha_neg < 1.0;
        if ok {
            Ok(())
        } else {
            Err(SamplerError::BadThresholds {
                alpha_pos: self.alpha_pos,
                alpha_neg: self.alpha_neg,
            })
        }
    }
}

/// One-proportion z statistic: `(p_hat - p0) / sqrt(p0 (1 - p0) / n)`.
pub fn z_statistic(count: u64, total: u64, chance_rate: f64) -> Result<f64, SamplerError> {
    if total == 0 {
        return Err(SamplerError::EmptyAnchor(0));
    }
    if count > total {
        return Err(SamplerError::CountExceedsTotal { count, total });
    }
    if !(chance_rate > 0.0 && chance_rate < 1.0) {
        return Err(SamplerError::BadChanceRate(chance_rate));
    }
    let p_hat = count as f64 / total as f64;
    let se = (chance_rate * (1.0 - chance_rate) / total as f64).sqrt();
    Ok((p_hat - chance_rate) / se)
}

/// Upper-tail p-value `1 - Phi(z)`, computed through the complementary
/// error function.
pub fn p_value(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Sparse discrete distribution over asset indices with precomputed
/// cumulative weights for inverse-CDF draws.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    indices: Vec<usize>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl DiscreteDist {
    /// Normalizes `weights` over `indices`. Callers guarantee a positive
    /// total weight; empty inputs produce the empty distribution.
    fn new(indices: Vec<usize>, raw_weights: Vec<f64>) -> Self {
        debug_assert_eq!(indices.len(), raw_weights.len());
        if indices.is_empty() {
            return DiscreteDist {
                indices,
                weights: raw_weights,
                cumulative: Vec::new(),
            };
        }
        let total: f64 = raw_weights.iter().sum();
        debug_assert!(total > 0.0);
        let weights: Vec<f64> = raw_weights.iter().map(|w| w / total).collect();
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        // guard the last bucket against rounding shortfall
        *cumulative.last_mut().unwrap() = 1.0;
        DiscreteDist {
            indices,
            weights,
            cumulative,
        }
    }

    fn empty() -> Self {
        DiscreteDist {
            indices: Vec::new(),
            weights: Vec::new(),
            cumulative: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn support(&self) -> &[usize] {
        &self.indices
    }

    /// Normalized weight of asset `j`, or 0 outside the support.
    pub fn weight_of(&self, j: usize) -> f64 {
        self.indices
            .iter()
            .position(|&idx| idx == j)
            .map_or(0.0, |pos| self.weights[pos])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Inverse-CDF lookup for a uniform draw `u` in `[0, 1)`.
    pub fn sample(&self, u: f64) -> usize {
        debug_assert!(!self.is_empty());
        let pos = self.cumulative.partition_point(|&c| c <= u);
        self.indices[pos.min(self.indices.len() - 1)]
    }
}

/// Per-anchor positive and negative sampling distributions plus the
/// p-value matrix they were derived from.
#[derive(Debug, Clone)]
pub struct SamplingTables {
    asset_ids: Vec<String>,
    p_values: Mat,
    positive: Vec<DiscreteDist>,
    negative: Vec<DiscreteDist>,
    totals: Vec<u64>,
    chance_rate: f64,
    config: TestConfig,
}

struct AnchorRow {
    p_values: Vec<f64>,
    positive: DiscreteDist,
    negative: DiscreteDist,
    total: u64,
}

fn build_anchor_row(
    cooc: &CooccurrenceMatrix,
    config: &TestConfig,
    chance_rate: f64,
    anchor: usize,
) -> Result<AnchorRow, SamplerError> {
    let n = cooc.n_assets();
    let total = cooc.row_sum(anchor);
    if total == 0 {
        return Err(SamplerError::EmptyAnchor(anchor));
    }
    let row_max = cooc
        .row(anchor)
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != anchor)
        .map(|(_, &c)| c)
        .max()
        .unwrap_or(0);
    let mut p_values = vec![f64::NAN; n];
    let mut pos_idx = Vec::new();
    let mut pos_w = Vec::new();
    let mut neg_idx = Vec::new();
    let mut neg_w = Vec::new();
    for (j, slot) in p_values.iter_mut().enumerate() {
        if j == anchor {
            continue;
        }
        let count = cooc.count(anchor, j) as u64;
        let z = z_statistic(count, total, chance_rate)?;
        let p = p_value(z);
        *slot = p;
        if p < config.alpha_pos {
            pos_idx.push(j);
            pos_w.push(count as f64);
        } else if p > config.alpha_neg {
            neg_idx.push(j);
            neg_w.push((row_max - count as u32) as f64);
        }
    }
    let positive = if pos_idx.is_empty() || pos_w.iter().sum::<f64>() == 0.0 {
        DiscreteDist::empty()
    } else {
        DiscreteDist::new(pos_idx, pos_w)
    };
    let negative = if neg_idx.is_empty() {
        DiscreteDist::empty()
    } else if neg_w.iter().sum::<f64>() == 0.0 {
        // every qualifying count equals the row maximum; fall back to
        // uniform so the distribution stays usable
        let len = neg_idx.len();
        DiscreteDist::new(neg_idx, vec![1.0; len])
    } else {
        DiscreteDist::new(neg_idx, neg_w)
    };
    Ok(AnchorRow {
        p_values,
        positive,
        negative,
        total,
    })
}

/// Builds the sampling tables for every anchor. Anchors whose qualifying
/// sets come out empty are kept with empty distributions (flagged, not
/// fatal); the trainer skips them.
pub fn build_tables(
    cooc: &CooccurrenceMatrix,
    config: &TestConfig,
) -> Result<SamplingTables, SamplerError> {
    config.validate()?;
    let n = cooc.n_assets();
    if n < 3 {
        return Err(SamplerError::TooFewAssets(n));
    }
    let chance_rate = 1.0 / n as f64;

    #[cfg(feature = "parallel")]
    let rows: Vec<AnchorRow> = {
        use rayon::prelude::*;
        (0..n)
            .into_par_iter()
            .map(|i| build_anchor_row(cooc, config, chance_rate, i))
            .collect::<Result<_, _>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<AnchorRow> = (0..n)
        .map(|i| build_anchor_row(cooc, config, chance_rate, i))
        .collect::<Result<_, _>>()?;

    let mut p_values = Mat::zeros(n, n);
    let mut positive = Vec::with_capacity(n);
    let mut negative = Vec::with_capacity(n);
    let mut totals = Vec::with_capacity(n);
    for (i, row) in rows.into_iter().enumerate() {
        p_values.row_mut(i).copy_from_slice(&row.p_values);
        positive.push(row.positive);
        negative.push(row.negative);
        totals.push(row.total);
    }
    Ok(SamplingTables {
        asset_ids: cooc.asset_ids().to_vec(),
        p_values,
        positive,
        negative,
        totals,
        chance_rate,
        config: *config,
    })
}

impl SamplingTables {
    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    /// p-value of the ordered pair (anchor, other); NaN on the diagonal.
    pub fn p_value_of(&self, anchor: usize, other: usize) -> f64 {
        self.p_values.get(anchor, other)
    }

    pub fn positive(&self, anchor: usize) -> &DiscreteDist {
        &self.positive[anchor]
    }

    pub fn negative(&self, anchor: usize) -> &DiscreteDist {
        &self.negative[anchor]
    }

    /// Total co-occurrence count n_i for the anchor.
    pub fn total(&self, anchor: usize) -> u64 {
        self.totals[anchor]
    }

    pub fn chance_rate(&self) -> f64 {
        self.chance_rate
    }

    pub fn config(&self) -> &TestConfig {
        &self.config
    }

    /// Anchors unusable for training: empty positive or negative support.
    pub fn anchors_without_support(&self) -> Vec<usize> {
        (0..self.n_assets())
            .filter(|&i| self.positive[i].is_empty() || self.negative[i].is_empty())
            .collect()
    }

    /// Draws `num_pos` positive and `num_neg` negative indices for the
    /// anchor, with replacement, consuming one uniform per draw from `rng`
    /// (positives first).
    pub fn draw(
        &self,
        anchor: usize,
        num_pos: usize,
        num_neg: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<usize>, Vec<usize>), SamplerError> {
        if anchor >= self.n_assets() {
            return Err(SamplerError::AnchorOutOfRange(anchor));
        }
        if self.positive[anchor].is_empty() {
            return Err(SamplerError::EmptySupport {
                anchor,
                side: "positive",
            });
        }
        if self.negative[anchor].is_empty() {
            return Err(SamplerError::EmptySupport {
                anchor,
                side: "negative",
            });
        }
        let positives = (0..num_pos)
            .map(|_| self.positive[anchor].sample(unit_f64(rng)))
            .collect();
        let negatives = (0..num_neg)
            .map(|_| self.negative[anchor].sample(unit_f64(rng)))
            .collect();
        Ok((positives, negatives))
    }

    /// Seeded convenience wrapper around [`draw`]: deterministic for a
    /// given `(tables, anchor, counts, seed)`.
    ///
    /// [`draw`]: SamplingTables::draw
    pub fn draw_seeded(
        &self,
        anchor: usize,
        num_pos: usize,
        num_neg: usize,
        seed: u64,
    ) -> Result<(Vec<usize>, Vec<usize>), SamplerError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.draw(anchor, num_pos, num_neg, &mut rng)
    }

    /// Histogram of all off-diagonal p-values over `num_bins` equal bins
    /// partitioning [0, 1]. Returns (left edge, count) pairs.
    pub fn p_value_histogram(&self, num_bins: usize) -> Result<Vec<(f64, u64)>, SamplerError> {
        if num_bins == 0 {
            return Err(SamplerError::BadBinCount);
        }
        let mut counts = vec![0u64; num_bins];
        let n = self.n_assets();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let p = self.p_values.get(i, j);
                let bin = ((p * num_bins as f64) as usize).min(num_bins - 1);
                counts[bin] += 1;
            }
        }
        Ok(counts
            .into_iter()
            .enumerate()
            .map(|(b, c)| (b as f64 / num_bins as f64, c))
            .collect())
    }

    /// Audit export: `anchor,asset,p_value,pos_weight,neg_weight` for all
    /// ordered off-diagonal pairs.
    pub fn write_csv(&self, path: &Path) -> Result<(), SamplerError> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["anchor", "asset", "p_value", "pos_weight", "neg_weight"])?;
        let n = self.n_assets();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                writer.write_record(&[
                    self.asset_ids[i].clone(),
                    self.asset_ids[j].clone(),
                    format!("{}", self.p_values.get(i, j)),
                    format!("{}", self.positive[i].weight_of(j)),
                    format!("{}", self.negative[i].weight_of(j)),
                ])?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

/// Writes a p-value histogram as `bin_edge,count` CSV.
pub fn write_histogram_csv(
    histogram: &[(f64, u64)],
    path: &Path,
) -> Result<(), SamplerError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["bin_edge", "count"])?;
    for (edge, count) in histogram {
        writer.write_record(&[format!("{edge}"), count.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}
