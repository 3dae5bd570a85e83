//! Synthetic data with planted structure and brute-force reference
//! implementations used by tests and the acceptance suite.
//!
//! The factor-model generator is deliberately pinned to reproducible
//! primitives (ChaCha8 + the Box-Muller transform documented in
//! [`crate::rng`]) so a panel can be regenerated bit-for-bit from its spec
//! anywhere the same generator is available.

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::panel::{AssetLabel, PanelError, ReturnsPanel};
use crate::rng::standard_normal;
use crate::similarity::{CooccurrenceMatrix, SimilarityError, WindowConfig};

#[derive(Debug, thiserror::Error)]
pub enum TestkitError {
    #[error("factor model needs at least 2 blocks, got {0}")]
    TooFewBlocks(usize),
    #[error("factor model needs at least 2 assets per block, got {0}")]
    TooFewAssetsPerBlock(usize),
    #[error("volatilities must be positive (factor {factor}, idio {idio})")]
    BadVolatility { factor: f64, idio: f64 },
    #[error("cross-block correlation must lie in [0, 1), got {0}")]
    BadCrossCorrelation(f64),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

/// Block factor model: asset (b, i) returns `factor_b(t) + idio(t)`, with
/// sector labels equal to the block id.
#[derive(Debug, Clone, Copy)]
pub struct FactorModelSpec {
    pub num_blocks: usize,
    pub assets_per_block: usize,
    pub num_days: usize,
    /// Daily factor volatility, e.g. 0.01.
    pub factor_vol: f64,
    /// Daily idiosyncratic volatility.
    pub idio_vol: f64,
    /// Pairwise correlation between block factors (0 = independent).
    pub cross_block_correlation: f64,
    pub seed: u64,
}

impl FactorModelSpec {
    fn validate(&self) -> Result<(), TestkitError> {
        if self.num_blocks < 2 {
            return Err(TestkitError::TooFewBlocks(self.num_blocks));
        }
        if self.assets_per_block < 2 {
            return Err(TestkitError::TooFewAssetsPerBlock(self.assets_per_block));
        }
        if !(self.factor_vol > 0.0 && self.idio_vol > 0.0) {
            return Err(TestkitError::BadVolatility {
                factor: self.factor_vol,
                idio: self.idio_vol,
            });
        }
        if !(0.0..1.0).contains(&self.cross_block_correlation) {
            return Err(TestkitError::BadCrossCorrelation(self.cross_block_correlation));
        }
        Ok(())
    }
}

/// Sequential ISO dates starting 2000-01-03 (calendar days; dates are
/// opaque identifiers downstream, so weekends are irrelevant).
fn synthetic_dates(count: usize) -> Vec<String> {
    let start = chrono::NaiveDate::from_ymd_opt(2000, 1, 3).unwrap();
    (0..count)
        .map(|t| {
            (start + chrono::Duration::days(t as i64))
                .format("%Y-%m-%d")
                .to_string()
        })
        .collect()
}

/// Generates the labeled block-factor panel. Draw order (one ChaCha8
/// stream): the common factor series (T normals), then each block's factor
/// series (T normals per block), then each asset's idiosyncratic series in
/// row-major order.
pub fn generate_factor_panel(spec: &FactorModelSpec) -> Result<ReturnsPanel, TestkitError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let days = spec.num_days;
    let common: Vec<f64> = (0..days).map(|_| standard_normal(&mut rng)).collect();
    let blocks: Vec<Vec<f64>> = (0..spec.num_blocks)
        .map(|_| (0..days).map(|_| standard_normal(&mut rng)).collect())
        .collect();
    let rho = spec.cross_block_correlation;
    let shared_scale = rho.sqrt();
    let own_scale = (1.0 - rho).sqrt();

    let mut asset_ids = Vec::new();
    let mut rows = Vec::new();
    let mut labels = std::collections::BTreeMap::new();
    for (block, block_factors) in blocks.iter().enumerate() {
        for asset in 0..spec.assets_per_block {
            let id = format!("B{block:02}A{asset:02}");
            let row: Vec<f64> = (0..days)
                .map(|t| {
                    let factor = spec.factor_vol
                        * (shared_scale * common[t] + own_scale * block_factors[t]);
                    factor + spec.idio_vol * standard_normal(&mut rng)
                })
                .collect();
            labels.insert(
                id.clone(),
                AssetLabel {
                    sector: format!("SECTOR_{block:02}"),
                    industry: format!("INDUSTRY_{block:02}"),
                },
            );
            asset_ids.push(id);
            rows.push(row);
        }
    }
    Ok(ReturnsPanel::new(
        asset_ids,
        synthetic_dates(days),
        rows,
        Some(labels),
    )?)
}

/// Reference co-occurrence build: plain triple loop with its own Pearson
/// and top-k selection, kept free of the engine's shortcuts. Intended for
/// small instances.
pub fn naive_cooccurrence_oracle(
    panel: &ReturnsPanel,
    config: &WindowConfig,
) -> Result<CooccurrenceMatrix, SimilarityError> {
    config.validate(panel.n_assets(), panel.n_dates())?;
    let n = panel.n_assets();
    let w = config.window;
    let num_windows = config.num_windows(panel.n_dates());
    let mut counts = vec![0u32; n * n];
    for window in 0..num_windows {
        let start = window * config.stride;
        for anchor in 0..n {
            let x = &panel.series(anchor)[start..start + w];
            // similarity to every other asset, compacted (anchor omitted)
            let mut sims = Vec::with_capacity(n - 1);
            for other in 0..n {
                if other == anchor {
                    continue;
                }
                let y = &panel.series(other)[start..start + w];
                sims.push(reference_pearson(x, y));
            }
            let mut order: Vec<usize> = (0..sims.len()).collect();
            order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then_with(|| a.cmp(&b)));
            for &c in order.iter().take(config.top_k) {
                let other = if c < anchor { c } else { c + 1 };
                counts[anchor * n + other] += 1;
            }
        }
    }
    Ok(CooccurrenceMatrix::from_parts(
        counts,
        num_windows,
        *config,
        panel.asset_ids().to_vec(),
    ))
}

fn reference_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mut sum_x = 0.0;
    let mut sum_y = 0.0;
    for t in 0..x.len() {
        sum_x += x[t];
        sum_y += y[t];
    }
    let mean_x = sum_x / n;
    let mean_y = sum_y / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for t in 0..x.len() {
        let dx = x[t] - mean_x;
        let dy = y[t] - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Central finite differences of `f` at `x` with step `h` per coordinate.
pub fn finite_difference_gradient<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let original = probe[i];
        probe[i] = original + h;
        let plus = f(&probe);
        probe[i] = original - h;
        let minus = f(&probe);
        probe[i] = original;
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// High-precision reference for the upper normal tail `1 - Phi(z)`,
/// independent of the sampler's erfc path: confluent series for small
/// arguments, Lentz continued fraction for the tail.
pub fn normal_cdf_upper_ref(z: f64) -> f64 {
    0.5 * erfc_ref(z / std::f64::consts::SQRT_2)
}

fn erfc_ref(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc_ref(-x);
    }
    if x < 3.0 {
        1.0 - erf_series(x)
    } else {
        erfc_continued_fraction(x)
    }
}

/// erf via the all-positive-term series
/// `erf(x) = (2x/sqrt(pi)) e^{-x^2} sum_k (2x^2)^k / (1*3*...*(2k+1))`.
fn erf_series(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let x2 = x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 0u32;
    loop {
        k += 1;
        term *= 2.0 * x2 / (2.0 * k as f64 + 1.0);
        sum += term;
        if term < 1e-18 * sum || k > 200 {
            break;
        }
    }
    2.0 * x / std::f64::consts::PI.sqrt() * (-x2).exp() * sum
}

/// A&S 7.1.14: `sqrt(pi) e^{x^2} erfc(x) = 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))`,
/// evaluated with modified Lentz.
fn erfc_continued_fraction(x: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = tiny;
    let mut c = f;
    let mut d = 0.0;
    for n in 0..200 {
        let (a, b) = if n == 0 { (1.0, x) } else { (n as f64 / 2.0, x) };
        d = b + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-x * x).exp() / std::f64::consts::PI.sqrt() * f
}

#[cfg(test)]
#[allow(clippy::excessive_precision)] // frozen reference constants
mod tests {
    use super::*;
    use crate::similarity::{build_cooccurrence, pearson};
    use approx::assert_abs_diff_eq;

    fn small_spec() -> FactorModelSpec {
        FactorModelSpec {
            num_blocks: 2,
            assets_per_block: 3,
            num_days: 50,
            factor_vol: 0.01,
            idio_vol: 0.005,
            cross_block_correlation: 0.0,
            seed: 42,
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let a = generate_factor_panel(&small_spec()).unwrap();
        let b = generate_factor_panel(&small_spec()).unwrap();
        assert_eq!(a.asset_ids(), b.asset_ids());
        for i in 0..a.n_assets() {
            for (x, y) in a.series(i).iter().zip(b.series(i)) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn generator_labels_blocks_as_sectors() {
        let panel = generate_factor_panel(&small_spec()).unwrap();
        assert_eq!(panel.n_assets(), 6);
        assert_eq!(panel.label_of("B00A01").unwrap().sector, "SECTOR_00");
        assert_eq!(panel.label_of("B01A02").unwrap().sector, "SECTOR_01");
        assert!(panel.dates().windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn tiny_idio_vol_gives_near_perfect_intra_block_correlation() {
        let spec = FactorModelSpec {
            idio_vol: 1e-9,
            ..small_spec()
        };
        let panel = generate_factor_panel(&spec).unwrap();
        let r = pearson(panel.series(0), panel.series(1)).unwrap();
        assert!(r > 0.999999, "intra-block correlation {r}");
    }

    #[test]
    fn independent_blocks_have_near_zero_cross_correlation() {
        let spec = FactorModelSpec {
            num_days: 2000,
            ..small_spec()
        };
        let panel = generate_factor_panel(&spec).unwrap();
        // asset 0 in block 0 vs asset 3 in block 1
        let r = pearson(panel.series(0), panel.series(3)).unwrap();
        assert!(r.abs() < 0.05, "cross-block correlation {r}");
    }

    #[test]
    fn cross_block_correlation_raises_factor_correlation() {
        let independent = generate_factor_panel(&FactorModelSpec {
            num_days: 3000,
            ..small_spec()
        })
        .unwrap();
        let coupled = generate_factor_panel(&FactorModelSpec {
            num_days: 3000,
            cross_block_correlation: 0.8,
            ..small_spec()
        })
        .unwrap();
        let r_ind = pearson(independent.series(0), independent.series(3)).unwrap();
        let r_cpl = pearson(coupled.series(0), coupled.series(3)).unwrap();
        assert!(r_cpl > r_ind + 0.3, "coupling had no effect: {r_ind} vs {r_cpl}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate_factor_panel(&FactorModelSpec {
            num_blocks: 1,
            ..small_spec()
        })
        .is_err());
        assert!(generate_factor_panel(&FactorModelSpec {
            idio_vol: 0.0,
            ..small_spec()
        })
        .is_err());
        assert!(generate_factor_panel(&FactorModelSpec {
            cross_block_correlation: 1.0,
            ..small_spec()
        })
        .is_err());
    }

    #[test]
    fn oracle_agrees_with_engine_on_a_random_panel() {
        let panel = generate_factor_panel(&small_spec()).unwrap();
        let config = WindowConfig::new(5, 2, 2);
        let oracle = naive_cooccurrence_oracle(&panel, &config).unwrap();
        let engine = build_cooccurrence(&panel, &config).unwrap();
        assert_eq!(oracle.counts(), engine.counts());
    }

    #[test]
    fn oracle_trivial_shapes() {
        let panel = generate_factor_panel(&small_spec()).unwrap();
        // k = N - 1: all off-diagonal counts equal W
        let config = WindowConfig::new(5, 2, 5);
        let oracle = naive_cooccurrence_oracle(&panel, &config).unwrap();
        let w = oracle.num_windows() as u32;
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(oracle.count(i, j), if i == j { 0 } else { w });
            }
        }
        // w = T, s = 1: a single window with k ones per row
        let config = WindowConfig::new(50, 1, 2);
        let oracle = naive_cooccurrence_oracle(&panel, &config).unwrap();
        assert_eq!(oracle.num_windows(), 1);
        for i in 0..6 {
            assert_eq!(oracle.row_sum(i), 2);
        }
    }

    #[test]
    fn finite_differences_recover_a_quadratic_gradient() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let grad = finite_difference_gradient(f, &[1.0, 2.0], 1e-5);
        assert_abs_diff_eq!(grad[0], 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(grad[1], 4.0, epsilon = 1e-8);
    }

    #[test]
    fn reference_normal_tail_matches_frozen_values() {
        // frozen 40-digit evaluations
        assert_abs_diff_eq!(normal_cdf_upper_ref(0.0), 0.5, epsilon = 1e-16);
        assert_abs_diff_eq!(
            normal_cdf_upper_ref(0.5),
            0.30853753872598689636,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            normal_cdf_upper_ref(1.0),
            0.15865525393145705141,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            normal_cdf_upper_ref(2.0),
            0.0227501319481792072,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            normal_cdf_upper_ref(5.0),
            2.8665157187919391167e-7,
            epsilon = 1e-18
        );
        assert_abs_diff_eq!(
            normal_cdf_upper_ref(8.0),
            6.2209605742717841235e-16,
            epsilon = 1e-27
        );
        assert_abs_diff_eq!(
            normal_cdf_upper_ref(-3.0),
            0.99865010196836990547,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            normal_cdf_upper_ref(-8.0),
            0.9999999999999993779,
            epsilon = 1e-14
        );
    }
}
