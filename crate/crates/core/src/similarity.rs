//! Windowed pairwise similarity and the top-k co-occurrence count matrix.
//!
//! For every sliding window the panel's assets are ranked by similarity to
//! each anchor; the k most similar assets get their co-occurrence count
//! with that anchor incremented. The count matrix is the sole input to the
//! sampling stage.

use std::io::{Read, Write};
use std::path::Path;

use crate::panel::ReturnsPanel;

const CACHE_MAGIC: &[u8; 4] = b"COOC";
const CACHE_VERSION: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SimilarityError {
    #[error("series length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("series too short for correlation: {0} < 2")]
    SeriesTooShort(usize),
    #[error("window length {window} must be in [2, {max}]")]
    BadWindow { window: usize, max: usize },
    #[error("stride must be at least 1")]
    BadStride,
    #[error("top_k {top_k} must be in [1, {max}]")]
    BadTopK { top_k: usize, max: usize },
    #[error("window starting at {start} with length {window} exceeds {len} dates")]
    WindowOutOfRange {
        start: usize,
        window: usize,
        len: usize,
    },
    #[error("k={k} exceeds vector length {len}")]
    TopKTooLarge { k: usize, len: usize },
    #[error("cache file is not a co-occurrence cache (bad magic)")]
    BadMagic,
    #[error("unsupported cache version {0}")]
    BadVersion(u8),
    #[error("cache holds {found} asset ids, panel has {expected}")]
    CacheAssetMismatch { expected: usize, found: usize },
    #[error("cache is truncated or oversized")]
    CacheSize,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Similarity measure between two return subsequences. Only Pearson ships;
/// the enum keeps the CLI surface and cache format stable for future
/// measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimilarityMeasure {
    #[default]
    Pearson,
}

impl SimilarityMeasure {
    pub fn name(&self) -> &'static str {
        match self {
            SimilarityMeasure::Pearson => "pearson",
        }
    }
}

/// Sliding-window parameters for the co-occurrence build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    /// Window length in trading days (w).
    pub window: usize,
    /// Stride in trading days (s).
    pub stride: usize,
    /// Number of most-similar assets counted per window (k).
    pub top_k: usize,
    pub measure: SimilarityMeasure,
}

impl WindowConfig {
    pub fn new(window: usize, stride: usize, top_k: usize) -> Self {
        WindowConfig {
            window,
            stride,
            top_k,
            measure: SimilarityMeasure::Pearson,
        }
    }

    pub fn validate(&self, n_assets: usize, n_dates: usize) -> Result<(), SimilarityError> {
        if self.window < 2 || self.window > n_dates {
            return Err(SimilarityError::BadWindow {
                window: self.window,
                max: n_dates,
            });
        }
        if self.stride == 0 {
            return Err(SimilarityError::BadStride);
        }
        if self.top_k == 0 || self.top_k > n_assets.saturating_sub(1) {
            return Err(SimilarityError::BadTopK {
                top_k: self.top_k,
                max: n_assets.saturating_sub(1),
            });
        }
        Ok(())
    }

    /// Number of full windows: `floor((T - w) / s) + 1`. Partial trailing
    /// windows are dropped.
    pub fn num_windows(&self, n_dates: usize) -> usize {
        (n_dates - self.window) / self.stride + 1
    }
}

/// Sample Pearson correlation, with the degeneracy flag set when either
/// series has exactly zero variance (the correlation is then defined as 0
/// so a flat series never wins a top-k slot on merit).
pub fn pearson_flagged(x: &[f64], y: &[f64]) -> Result<(f64, bool), SimilarityError> {
    if x.len() != y.len() {
        return Err(SimilarityError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(SimilarityError::SeriesTooShort(x.len()));
    }
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
        return Ok((0.0, true));
    }
    // (sxx * syy).sqrt() rather than sx * sy keeps the result bit-identical
    // under argument swap.
    Ok(((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0), false))
}

/// Sample Pearson correlation in `[-1, 1]`; zero-variance series yield 0.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, SimilarityError> {
    pearson_flagged(x, y).map(|(value, _)| value)
}

/// Similarities of the anchor's subsequence `[window_start, window_start+w)`
/// against every other asset over the same window, in asset order with the
/// anchor omitted (length N-1).
pub fn window_similarities(
    panel: &ReturnsPanel,
    anchor: usize,
    window_start: usize,
    config: &WindowConfig,
) -> Result<Vec<f64>, SimilarityError> {
    config.validate(panel.n_assets(), panel.n_dates())?;
    let w = config.window;
    if window_start + w > panel.n_dates() {
        return Err(SimilarityError::WindowOutOfRange {
            start: window_start,
            window: w,
            len: panel.n_dates(),
        });
    }
    let anchor_series = &panel.series(anchor)[window_start..window_start + w];
    let mut out = Vec::with_capacity(panel.n_assets() - 1);
    for j in 0..panel.n_assets() {
        if j == anchor {
            continue;
        }
        let other = &panel.series(j)[window_start..window_start + w];
        out.push(pearson(anchor_series, other)?);
    }
    Ok(out)
}

/// Indices of the k largest values, ties broken by lower index. Returned
/// sorted ascending.
pub fn top_k_indices(values: &[f64], k: usize) -> Result<Vec<usize>, SimilarityError> {
    if k > values.len() {
        return Err(SimilarityError::TopKTooLarge {
            k,
            len: values.len(),
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    let compare =
        |&a: &usize, &b: &usize| values[b].total_cmp(&values[a]).then_with(|| a.cmp(&b));
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, compare);
    }
    let mut top = order[..k].to_vec();
    top.sort_unstable();
    Ok(top)
}

/// Top-k co-occurrence counts over all sliding windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceMatrix {
    counts: Vec<u32>,
    n_assets: usize,
    num_windows: usize,
    config: WindowConfig,
    asset_ids: Vec<String>,
}

impl CooccurrenceMatrix {
    pub fn from_parts(
        counts: Vec<u32>,
        num_windows: usize,
        config: WindowConfig,
        asset_ids: Vec<String>,
    ) -> Self {
        assert_eq!(counts.len(), asset_ids.len() * asset_ids.len());
        CooccurrenceMatrix {
            counts,
            n_assets: asset_ids.len(),
            num_windows,
            config,
            asset_ids,
        }
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn num_windows(&self) -> usize {
        self.num_windows
    }

    pub fn config(&self) -> &WindowConfig {
        &self.config
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    #[inline]
    pub fn count(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.n_assets + j]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.counts[i * self.n_assets..(i + 1) * self.n_assets]
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.row(i).iter().map(|&c| c as u64).sum()
    }

    /// Binary cache: magic `COOC`, version byte, then N, W, w, s, k as
    /// little-endian u32, then row-major u32 counts.
    pub fn write_binary(&self, path: &Path) -> Result<(), SimilarityError> {
        let mut buf = Vec::with_capacity(4 + 1 + 20 + self.counts.len() * 4);
        buf.extend_from_slice(CACHE_MAGIC);
        buf.push(CACHE_VERSION);
        for value in [
            self.n_assets as u32,
            self.num_windows as u32,
            self.config.window as u32,
            self.config.stride as u32,
            self.config.top_k as u32,
        ] {
            buf.extend_from_slice(&value.to_le_bytes());
        }
        for count in &self.counts {
            buf.extend_from_slice(&count.to_le_bytes());
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    /// Reads a binary cache written by [`write_binary`]. The asset ids are
    /// not part of the cache; the caller supplies them (normally from the
    /// panel the cache was built from).
    ///
    /// [`write_binary`]: CooccurrenceMatrix::write_binary
    pub fn read_binary(path: &Path, asset_ids: Vec<String>) -> Result<Self, SimilarityError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 25 {
            return Err(SimilarityError::CacheSize);
        }
        if &bytes[0..4] != CACHE_MAGIC {
            return Err(SimilarityError::BadMagic);
        }
        if bytes[4] != CACHE_VERSION {
            return Err(SimilarityError::BadVersion(bytes[4]));
        }
        let mut words = [0u32; 5];
        for (idx, word) in words.iter_mut().enumerate() {
            let off = 5 + idx * 4;
            *word = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        }
        let [n, num_windows, window, stride, top_k] = words;
        let n = n as usize;
        if asset_ids.len() != n {
            return Err(SimilarityError::CacheAssetMismatch {
                expected: asset_ids.len(),
                found: n,
            });
        }
        let body = &bytes[25..];
        if body.len() != n * n * 4 {
            return Err(SimilarityError::CacheSize);
        }
        let counts: Vec<u32> = body
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(CooccurrenceMatrix {
            counts,
            n_assets: n,
            num_windows: num_windows as usize,
            config: WindowConfig::new(window as usize, stride as usize, top_k as usize),
            asset_ids,
        })
    }

    /// Human-readable matrix dump: header `anchor,<asset ids...>`, one row
    /// of counts per anchor.
    pub fn write_csv(&self, path: &Path) -> Result<(), SimilarityError> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec!["anchor".to_string()];
        header.extend(self.asset_ids.iter().cloned());
        writer.write_record(&header)?;
        for i in 0..self.n_assets {
            let mut record = vec![self.asset_ids[i].clone()];
            record.extend(self.row(i).iter().map(|c| c.to_string()));
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Accumulates one window's top-k memberships into `counts`, reusing
/// `sim_scratch` (N*N) and `vals_scratch` (N-1) buffers.
fn accumulate_window(
    panel: &ReturnsPanel,
    config: &WindowConfig,
    window_start: usize,
    sim_scratch: &mut [f64],
    vals_scratch: &mut [f64],
    counts: &mut [u32],
) -> Result<(), SimilarityError> {
    let n = panel.n_assets();
    let w = config.window;
    for i in 0..n {
        let xi = &panel.series(i)[window_start..window_start + w];
        for j in (i + 1)..n {
            let xj = &panel.series(j)[window_start..window_start + w];
            let r = pearson(xi, xj)?;
            sim_scratch[i * n + j] = r;
            sim_scratch[j * n + i] = r;
        }
    }
    for i in 0..n {
        for j in 0..n {
            if j != i {
                let c = if j < i { j } else { j - 1 };
                vals_scratch[c] = sim_scratch[i * n + j];
            }
        }
        for c in top_k_indices(vals_scratch, config.top_k)? {
            let j = if c < i { c } else { c + 1 };
            counts[i * n + j] += 1;
        }
    }
    Ok(())
}

/// Single-threaded co-occurrence build. Always available; the parallel
/// build must match it bit for bit.
pub fn build_cooccurrence_serial(
    panel: &ReturnsPanel,
    config: &WindowConfig,
) -> Result<CooccurrenceMatrix, SimilarityError> {
    config.validate(panel.n_assets(), panel.n_dates())?;
    let n = panel.n_assets();
    let num_windows = config.num_windows(panel.n_dates());
    let mut counts = vec![0u32; n * n];
    let mut sim = vec![0.0; n * n];
    let mut vals = vec![0.0; n - 1];
    for wi in 0..num_windows {
        accumulate_window(panel, config, wi * config.stride, &mut sim, &mut vals, &mut counts)?;
    }
    Ok(CooccurrenceMatrix::from_parts(
        counts,
        num_windows,
        *config,
        panel.asset_ids().to_vec(),
    ))
}

/// Co-occurrence build over all sliding windows. With the `parallel`
/// feature the windows fan out across the rayon pool; per-worker count
/// matrices are merged with integer addition, so the result is identical
/// to the serial build regardless of thread count.
#[cfg(feature = "parallel")]
pub fn build_cooccurrence(
    panel: &ReturnsPanel,
    config: &WindowConfig,
) -> Result<CooccurrenceMatrix, SimilarityError> {
    use rayon::prelude::*;

    config.validate(panel.n_assets(), panel.n_dates())?;
    let n = panel.n_assets();
    let num_windows = config.num_windows(panel.n_dates());
    let counts = (0..num_windows)
        .into_par_iter()
        .try_fold(
            || (vec![0u32; n * n], vec![0.0; n * n], vec![0.0; n - 1]),
            |(mut counts, mut sim, mut vals), wi| {
                accumulate_window(panel, config, wi * config.stride, &mut sim, &mut vals, &mut counts)?;
                Ok((counts, sim, vals))
            },
        )
        .map(|state: Result<_, SimilarityError>| state.map(|(counts, _, _)| counts))
        .try_reduce(
            || vec![0u32; n * n],
            |mut left, right| {
                for (l, r) in left.iter_mut().zip(&right) {
                    *l += r;
                }
                Ok(left)
            },
        )?;
    Ok(CooccurrenceMatrix::from_parts(
        counts,
        num_windows,
        *config,
        panel.asset_ids().to_vec(),
    ))
}

/// Sequential fallback used when the `parallel` feature is disabled.
#[cfg(not(feature = "parallel"))]
pub fn build_cooccurrence(
    panel: &ReturnsPanel,
    config: &WindowConfig,
) -> Result<CooccurrenceMatrix, SimilarityError> {
    build_cooccurrence_serial(panel, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel_from_rows(rows: Vec<Vec<f64>>) -> ReturnsPanel {
        let n_dates = rows[0].len();
        let ids = (0..rows.len()).map(|i| format!("A{i}")).collect();
        let dates = (0..n_dates).map(|t| format!("2020-{:03}", t + 1)).collect();
        ReturnsPanel::new(ids, dates, rows, None).unwrap()
    }

    #[test]
    fn pearson_hand_cases() {
        let (r, flag) = pearson_flagged(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
        assert!(!flag);
        let (r, _) = pearson_flagged(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap();
        assert!((r + 1.0).abs() < 1e-15);
        let (r, flag) = pearson_flagged(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r, 0.0);
        assert!(flag);
        assert!(matches!(
            pearson(&[1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(SimilarityError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn pearson_is_bitwise_symmetric() {
        let x = [0.3, -0.7, 0.11, 0.932, -0.05];
        let y = [1.4, 0.2, -0.9, 0.07, 0.66];
        assert_eq!(
            pearson(&x, &y).unwrap().to_bits(),
            pearson(&y, &x).unwrap().to_bits()
        );
    }

    #[test]
    fn top_k_tie_breaks_by_lower_index() {
        assert_eq!(top_k_indices(&[0.3, 0.9, 0.1], 1).unwrap(), vec![1]);
        assert_eq!(top_k_indices(&[0.5, 0.5, 0.2], 1).unwrap(), vec![0]);
        assert_eq!(top_k_indices(&[0.5, 0.5, 0.2], 2).unwrap(), vec![0, 1]);
        assert!(matches!(
            top_k_indices(&[1.0], 2),
            Err(SimilarityError::TopKTooLarge { .. })
        ));
    }

    #[test]
    fn top_k_matches_full_sort_on_random_input() {
        use rand_chacha::ChaCha8Rng;
        use rand_core::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let len = 2 + crate::rng::uniform_index(&mut rng, 40);
            let values: Vec<f64> = (0..len)
                // coarse grid so ties actually happen
                .map(|_| (crate::rng::unit_f64(&mut rng) * 8.0).floor() / 8.0)
                .collect();
            let k = 1 + crate::rng::uniform_index(&mut rng, len);
            let mut order: Vec<usize> = (0..len).collect();
            order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then_with(|| a.cmp(&b)));
            let mut expected = order[..k].to_vec();
            expected.sort_unstable();
            assert_eq!(top_k_indices(&values, k).unwrap(), expected);
        }
    }

    #[test]
    fn window_similarities_constructed_case() {
        // asset 1 tracks asset 0, asset 2 is its negation
        let panel = panel_from_rows(vec![
            vec![0.01, -0.02, 0.03, 0.01],
            vec![0.01, -0.02, 0.03, 0.02],
            vec![-0.01, 0.02, -0.03, -0.04],
        ]);
        let config = WindowConfig::new(3, 1, 1);
        let sims = window_similarities(&panel, 0, 0, &config).unwrap();
        assert!((sims[0] - 1.0).abs() < 1e-12);
        assert!((sims[1] + 1.0).abs() < 1e-12);
        assert!(matches!(
            window_similarities(&panel, 0, 2, &config),
            Err(SimilarityError::WindowOutOfRange { .. })
        ));
    }

    #[test]
    fn single_window_when_w_equals_t() {
        let panel = panel_from_rows(vec![
            vec![0.01, -0.02, 0.03, 0.01],
            vec![0.03, -0.01, 0.02, 0.00],
            vec![-0.01, 0.02, -0.03, -0.04],
        ]);
        let config = WindowConfig::new(4, 7, 1);
        assert_eq!(config.num_windows(panel.n_dates()), 1);
        let cooc = build_cooccurrence_serial(&panel, &config).unwrap();
        assert_eq!(cooc.num_windows(), 1);
        for i in 0..3 {
            assert_eq!(cooc.row_sum(i), 1);
        }
    }

    #[test]
    fn tracked_asset_wins_every_window() {
        // N=3, T=4, w=2, s=1 -> W=3; asset 1 always tracks asset 0
        let panel = panel_from_rows(vec![
            vec![0.01, -0.02, 0.03, -0.01],
            vec![0.02, -0.04, 0.06, -0.02],
            vec![-0.01, 0.02, -0.03, 0.01],
        ]);
        let config = WindowConfig::new(2, 1, 1);
        let cooc = build_cooccurrence(&panel, &config).unwrap();
        assert_eq!(cooc.num_windows(), 3);
        assert_eq!(cooc.count(0, 1), 3);
        assert_eq!(cooc.count(0, 2), 0);
    }

    #[test]
    fn k_equals_n_minus_one_saturates() {
        let panel = panel_from_rows(vec![
            vec![0.01, -0.02, 0.03, -0.01, 0.02],
            vec![0.02, -0.04, 0.05, -0.02, 0.01],
            vec![-0.01, 0.02, -0.03, 0.01, 0.00],
            vec![0.00, 0.01, -0.01, 0.02, -0.02],
        ]);
        let config = WindowConfig::new(2, 2, 3);
        let cooc = build_cooccurrence(&panel, &config).unwrap();
        let w = cooc.num_windows() as u32;
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(cooc.count(i, j), if i == j { 0 } else { w });
            }
        }
    }

    #[test]
    fn rejects_oversized_window() {
        let panel = panel_from_rows(vec![vec![0.01, 0.02], vec![0.02, 0.01]]);
        let config = WindowConfig::new(3, 1, 1);
        assert!(matches!(
            build_cooccurrence(&panel, &config),
            Err(SimilarityError::BadWindow { .. })
        ));
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_and_serial_builds_are_bit_identical() {
        use rand_chacha::ChaCha8Rng;
        use rand_core::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..40).map(|_| crate::rng::standard_normal(&mut rng) * 0.01).collect())
            .collect();
        let panel = panel_from_rows(rows);
        let config = WindowConfig::new(5, 3, 3);
        let par = build_cooccurrence(&panel, &config).unwrap();
        let ser = build_cooccurrence_serial(&panel, &config).unwrap();
        assert_eq!(par.counts(), ser.counts());
        assert_eq!(par.num_windows(), ser.num_windows());
    }

    #[test]
    fn binary_cache_roundtrip() {
        let panel = panel_from_rows(vec![
            vec![0.01, -0.02, 0.03, -0.01],
            vec![0.02, -0.04, 0.06, -0.02],
            vec![-0.01, 0.02, -0.03, 0.01],
        ]);
        let config = WindowConfig::new(2, 1, 1);
        let cooc = build_cooccurrence(&panel, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cooc.bin");
        cooc.write_binary(&path).unwrap();
        let loaded =
            CooccurrenceMatrix::read_binary(&path, panel.asset_ids().to_vec()).unwrap();
        assert_eq!(loaded, cooc);
        // deterministic bytes on rewrite
        let bytes_a = std::fs::read(&path).unwrap();
        cooc.write_binary(&path).unwrap();
        assert_eq!(bytes_a, std::fs::read(&path).unwrap());
        // id count mismatch
        assert!(matches!(
            CooccurrenceMatrix::read_binary(&path, vec!["X".into()]),
            Err(SimilarityError::CacheAssetMismatch { .. })
        ));
    }
}
