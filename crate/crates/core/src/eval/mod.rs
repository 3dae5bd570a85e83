//! Downstream evaluation of trained embeddings: nearest-neighbor
//! inspection, sector classification and the dissimilar-asset hedging
//! backtest.

mod classify;
mod stats;

pub use classify::{
    classify_sectors, labeled_features, macro_f1, stratified_folds, ClassificationReport,
    ClassifyConfig, FoldScore, LabeledFeatures, LogisticModel,
};
pub use stats::{
    average_ranks, spearman, student_t_cdf, welch_t_test_one_sided, WelchResult,
};

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::panel::ReturnsPanel;
use crate::rng::uniform_index;
use crate::similarity::{pearson, SimilarityError};
use crate::trainer::EmbeddingMatrix;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("unknown asset id {0:?}")]
    UnknownAsset(String),
    #[error("neighbor count {m} must be at most {max}")]
    TooManyNeighbors { m: usize, max: usize },
    #[error("no sector labels available")]
    NoLabels,
    #[error("need at least 2 usable classes, found {0}")]
    TooFewClasses(usize),
    #[error("fold count {0} must be at least 2")]
    BadFoldCount(usize),
    #[error("series length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("series too short: {0} < 2")]
    SeriesTooShort(usize),
    #[error("samples need at least 2 observations, found {0}")]
    SampleTooSmall(usize),
    #[error("pool size {pool} must be below the universe size {universe}")]
    PoolTooLarge { pool: usize, universe: usize },
    #[error("train and test panels hold different asset universes")]
    UniverseMismatch,
    #[error("embedding universe does not match the panel universe")]
    EmbeddingMismatch,
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// Top-m assets by cosine similarity to the anchor, descending, anchor
/// excluded; ties broken by ascending index.
pub fn knn_neighbors(
    embedding: &EmbeddingMatrix,
    anchor_id: &str,
    m: usize,
) -> Result<Vec<(String, f64)>, EvalError> {
    let anchor = embedding
        .index_of(anchor_id)
        .ok_or_else(|| EvalError::UnknownAsset(anchor_id.to_string()))?;
    let max = embedding.n_assets() - 1;
    if m > max {
        return Err(EvalError::TooManyNeighbors { m, max });
    }
    let anchor_vec = embedding.vector(anchor);
    let mut scored: Vec<(usize, f64)> = (0..embedding.n_assets())
        .filter(|&j| j != anchor)
        .map(|j| (j, cosine(anchor_vec, embedding.vector(j))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(m)
        .map(|(j, sim)| (embedding.asset_ids()[j].clone(), sim))
        .collect())
}

/// Annualized sample standard deviation of a return series.
pub fn realized_volatility(returns: &[f64], periods_per_year: f64) -> Result<f64, EvalError> {
    if returns.len() < 2 {
        return Err(EvalError::SeriesTooShort(returns.len()));
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt() * periods_per_year.sqrt())
}

/// Where hedge-candidate similarity comes from.
pub enum SimilaritySource<'a> {
    Embedding(&'a EmbeddingMatrix),
    Pearson,
    Spearman,
}

impl SimilaritySource<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            SimilaritySource::Embedding(_) => "embedding",
            SimilaritySource::Pearson => "pearson",
            SimilaritySource::Spearman => "spearman",
        }
    }
}

#[derive(Debug, Clone)]
pub struct HedgeConfig {
    /// Number of most-dissimilar assets forming each target's hedge pool.
    pub pool_size: usize,
    /// Trials per target.
    pub repeats: usize,
    pub seed: u64,
    pub periods_per_year: f64,
}

impl Default for HedgeConfig {
    fn default() -> Self {
        HedgeConfig {
            pool_size: 25,
            repeats: 100,
            seed: 0,
            periods_per_year: 252.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HedgeTrial {
    pub target: usize,
    pub trial: usize,
    pub hedge: usize,
    pub volatility: f64,
}

#[derive(Debug, Clone)]
pub struct HedgeReport {
    pub asset_ids: Vec<String>,
    pub method_name: String,
    pub method_trials: Vec<HedgeTrial>,
    pub baseline_trials: Vec<HedgeTrial>,
    pub method_mean: f64,
    pub baseline_mean: f64,
    /// One-sided Welch test of method volatilities below the Pearson
    /// baseline's.
    pub welch: WelchResult,
}

impl HedgeReport {
    /// Long-format export for box plots: `method,target,trial,volatility`.
    pub fn write_trials_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["method", "target", "trial", "volatility"])?;
        for (name, trials) in [
            (self.method_name.as_str(), &self.method_trials),
            ("pearson-baseline", &self.baseline_trials),
        ] {
            for trial in trials {
                writer.write_record(&[
                    name.to_string(),
                    self.asset_ids[trial.target].clone(),
                    trial.trial.to_string(),
                    format!("{}", trial.volatility),
                ])?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

/// Full similarity matrix of the train panel under the given source.
/// Diagonal entries are unused.
fn similarity_matrix(
    train_panel: &ReturnsPanel,
    source: &SimilaritySource,
) -> Result<Vec<f64>, EvalError> {
    let n = train_panel.n_assets();
    let mut sims = vec![0.0; n * n];
    match source {
        SimilaritySource::Embedding(embedding) => {
            if embedding.asset_ids() != train_panel.asset_ids() {
                return Err(EvalError::EmbeddingMismatch);
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    let s = cosine(embedding.vector(i), embedding.vector(j));
                    sims[i * n + j] = s;
                    sims[j * n + i] = s;
                }
            }
        }
        SimilaritySource::Pearson => {
            for i in 0..n {
                for j in (i + 1)..n {
                    let s = pearson(train_panel.series(i), train_panel.series(j))?;
                    sims[i * n + j] = s;
                    sims[j * n + i] = s;
                }
            }
        }
        SimilaritySource::Spearman => {
            let ranks: Vec<Vec<f64>> = (0..n)
                .map(|i| average_ranks(train_panel.series(i)))
                .collect();
            for i in 0..n {
                for j in (i + 1)..n {
                    let s = pearson(&ranks[i], &ranks[j])?;
                    sims[i * n + j] = s;
                    sims[j * n + i] = s;
                }
            }
        }
    }
    Ok(sims)
}

/// The `pool_size` most dissimilar assets to `target` (ascending
/// similarity, ties by index).
fn dissimilarity_pool(sims: &[f64], n: usize, target: usize, pool_size: usize) -> Vec<usize> {
    let mut others: Vec<usize> = (0..n).filter(|&j| j != target).collect();
    others.sort_by(|&a, &b| {
        sims[target * n + a]
            .total_cmp(&sims[target * n + b])
            .then_with(|| a.cmp(&b))
    });
    others.truncate(pool_size);
    others
}

fn run_trials(
    test_panel: &ReturnsPanel,
    sims: &[f64],
    config: &HedgeConfig,
) -> Result<Vec<HedgeTrial>, EvalError> {
    let n = test_panel.n_assets();

    let run_target = |target: usize| -> Result<Vec<HedgeTrial>, EvalError> {
        let pool = dissimilarity_pool(sims, n, target, config.pool_size);
        let mut trials = Vec::with_capacity(config.repeats);
        for trial in 0..config.repeats {
            // trial seeds are derived, so trials stay independent and the
            // loop can run in any order
            let trial_index = (target * config.repeats + trial) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(trial_index));
            let hedge = pool[uniform_index(&mut rng, pool.len())];
            let target_series = test_panel.series(target);
            let hedge_series = test_panel.series(hedge);
            let portfolio: Vec<f64> = target_series
                .iter()
                .zip(hedge_series)
                .map(|(&a, &b)| 0.5 * (a + b))
                .collect();
            trials.push(HedgeTrial {
                target,
                trial,
                hedge,
                volatility: realized_volatility(&portfolio, config.periods_per_year)?,
            });
        }
        Ok(trials)
    };

    #[cfg(feature = "parallel")]
    let nested: Vec<Vec<HedgeTrial>> = {
        use rayon::prelude::*;
        (0..n)
            .into_par_iter()
            .map(run_target)
            .collect::<Result<_, _>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let nested: Vec<Vec<HedgeTrial>> = (0..n).map(run_target).collect::<Result<_, _>>()?;

    Ok(nested.into_iter().flatten().collect())
}

/// Hedging backtest. For every target asset the hedge is drawn uniformly
/// from the `pool_size` most dissimilar assets (similarity fitted on the
/// train panel only), the equal-weight daily-rebalanced two-asset
/// portfolio is formed on the test panel, and its annualized volatility
/// recorded. The Pearson baseline runs alongside with the same trial
/// seeds.
pub fn hedge_experiment(
    train_panel: &ReturnsPanel,
    test_panel: &ReturnsPanel,
    source: &SimilaritySource,
    config: &HedgeConfig,
) -> Result<HedgeReport, EvalError> {
    if train_panel.asset_ids() != test_panel.asset_ids() {
        return Err(EvalError::UniverseMismatch);
    }
    let n = train_panel.n_assets();
    if config.pool_size == 0 || config.pool_size >= n {
        return Err(EvalError::PoolTooLarge {
            pool: config.pool_size,
            universe: n,
        });
    }
    let method_sims = similarity_matrix(train_panel, source)?;
    let method_trials = run_trials(test_panel, &method_sims, config)?;
    let baseline_trials = match source {
        SimilaritySource::Pearson => method_trials.clone(),
        _ => {
            let baseline_sims = similarity_matrix(train_panel, &SimilaritySource::Pearson)?;
            run_trials(test_panel, &baseline_sims, config)?
        }
    };
    let method_vols: Vec<f64> = method_trials.iter().map(|t| t.volatility).collect();
    let baseline_vols: Vec<f64> = baseline_trials.iter().map(|t| t.volatility).collect();
    let method_mean = method_vols.iter().sum::<f64>() / method_vols.len() as f64;
    let baseline_mean = baseline_vols.iter().sum::<f64>() / baseline_vols.len() as f64;
    let welch = welch_t_test_one_sided(&method_vols, &baseline_vols)?;
    Ok(HedgeReport {
        asset_ids: train_panel.asset_ids().to_vec(),
        method_name: source.name().to_string(),
        method_trials,
        baseline_trials,
        method_mean,
        baseline_mean,
        welch,
    })
}
