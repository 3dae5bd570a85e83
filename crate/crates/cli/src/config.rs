//! Pipeline configuration: defaults, flat `key = value` config files and
//! stage-scoped hashing for on-disk caches.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Every knob of the pipeline. Priority: built-in defaults, then the
/// config file, then command-line flags.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineConfig {
    // input
    pub input: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// `prices` or `returns`
    pub format: String,
    /// `wide` or `long`
    pub layout: String,
    /// drop incomplete assets instead of failing
    pub lenient: bool,
    pub out_dir: PathBuf,
    // date splits (inclusive, ISO strings)
    pub train_start: Option<String>,
    pub train_end: Option<String>,
    pub test_start: Option<String>,
    pub test_end: Option<String>,
    // co-occurrence window
    pub window: usize,
    pub stride: usize,
    pub top_k: usize,
    pub similarity: String,
    // proportion test
    pub alpha_pos: f64,
    pub alpha_neg: f64,
    pub histogram_bins: usize,
    // training
    pub loss: String,
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub num_pos: usize,
    pub num_neg: usize,
    pub lambda: f64,
    pub norm_mode: String,
    pub sched_factor: f64,
    pub sched_patience: u32,
    pub sched_rel_tol: f64,
    pub sched_min_lr: f64,
    pub seed: u64,
    // evaluation
    pub folds: usize,
    pub pool_size: usize,
    pub repeats: usize,
    pub neighbors: usize,
    pub anchor: Option<String>,
    // synthetic data
    pub synth_blocks: usize,
    pub synth_assets_per_block: usize,
    pub synth_days: usize,
    pub synth_factor_vol: f64,
    pub synth_idio_vol: f64,
    pub synth_cross_correlation: f64,
    // extra outputs
    pub write_cooc_csv: bool,
    pub write_audit_csv: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: None,
            labels: None,
            format: "returns".into(),
            layout: "wide".into(),
            lenient: false,
            out_dir: PathBuf::from("out"),
            train_start: None,
            train_end: None,
            test_start: None,
            test_end: None,
            window: 22,
            stride: 5,
            top_k: 5,
            similarity: "pearson".into(),
            alpha_pos: 0.05,
            alpha_neg: 0.3,
            histogram_bins: 50,
            loss: "individual-sigmoid".into(),
            dim: 16,
            epochs: 30,
            batch_size: 128,
            learning_rate: 0.001,
            num_pos: 5,
            num_neg: 20,
            lambda: 0.001,
            norm_mode: "penalty".into(),
            sched_factor: 0.8,
            sched_patience: 3,
            sched_rel_tol: 1e-4,
            sched_min_lr: 1e-6,
            seed: 0,
            folds: 5,
            pool_size: 25,
            repeats: 100,
            neighbors: 5,
            anchor: None,
            synth_blocks: 3,
            synth_assets_per_block: 20,
            synth_days: 1500,
            synth_factor_vol: 0.01,
            synth_idio_vol: 0.005,
            synth_cross_correlation: 0.0,
            write_cooc_csv: false,
            write_audit_csv: false,
        }
    }
}

fn parse_bool(value: &str, key: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("config key {key}: expected a boolean, got {value:?}"),
    }
}

impl PipelineConfig {
    /// Applies `key = value` lines from a config file. `#` starts a
    /// comment; blank lines are skipped; unknown keys are an error.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "{}:{}: expected `key = value`, got {:?}",
                    path.display(),
                    line_no + 1,
                    raw
                );
            };
            self.set(key.trim(), value.trim())
                .with_context(|| format!("{}:{}", path.display(), line_no + 1))?;
        }
        Ok(())
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        macro_rules! num {
            () => {
                value
                    .parse()
                    .with_context(|| format!("config key {key}: cannot parse {value:?}"))?
            };
        }
        match key {
            "input" => self.input = Some(PathBuf::from(value)),
            "labels" => self.labels = Some(PathBuf::from(value)),
            "format" => self.format = value.to_string(),
            "layout" => self.layout = value.to_string(),
            "lenient" => self.lenient = parse_bool(value, key)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "train_start" => self.train_start = Some(value.to_string()),
            "train_end" => self.train_end = Some(value.to_string()),
            "test_start" => self.test_start = Some(value.to_string()),
            "test_end" => self.test_end = Some(value.to_string()),
            "window" => self.window = num!(),
            "stride" => self.stride = num!(),
            "top_k" => self.top_k = num!(),
            "similarity" => self.similarity = value.to_string(),
            "alpha_pos" => self.alpha_pos = num!(),
            "alpha_neg" => self.alpha_neg = num!(),
            "histogram_bins" => self.histogram_bins = num!(),
            "loss" => self.loss = value.to_string(),
            "dim" => self.dim = num!(),
            "epochs" => self.epochs = num!(),
            "batch_size" => self.batch_size = num!(),
            "learning_rate" => self.learning_rate = num!(),
            "num_pos" => self.num_pos = num!(),
            "num_neg" => self.num_neg = num!(),
            "lambda" => self.lambda = num!(),
            "norm_mode" => self.norm_mode = value.to_string(),
            "sched_factor" => self.sched_factor = num!(),
            "sched_patience" => self.sched_patience = num!(),
            "sched_rel_tol" => self.sched_rel_tol = num!(),
            "sched_min_lr" => self.sched_min_lr = num!(),
            "seed" => self.seed = num!(),
            "folds" => self.folds = num!(),
            "pool_size" => self.pool_size = num!(),
            "repeats" => self.repeats = num!(),
            "neighbors" => self.neighbors = num!(),
            "anchor" => self.anchor = Some(value.to_string()),
            "synth_blocks" => self.synth_blocks = num!(),
            "synth_assets_per_block" => self.synth_assets_per_block = num!(),
            "synth_days" => self.synth_days = num!(),
            "synth_factor_vol" => self.synth_factor_vol = num!(),
            "synth_idio_vol" => self.synth_idio_vol = num!(),
            "synth_cross_correlation" => self.synth_cross_correlation = num!(),
            "write_cooc_csv" => self.write_cooc_csv = parse_bool(value, key)?,
            "write_audit_csv" => self.write_audit_csv = parse_bool(value, key)?,
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Canonical rendering of the inputs that determine the co-occurrence
    /// cache: the input file's content digest plus the slice and window
    /// parameters.
    pub fn cooccur_scope(&self) -> Result<String> {
        let input = self
            .input
            .as_ref()
            .context("no input file configured (set `input` or pass --input)")?;
        let bytes = std::fs::read(input)
            .with_context(|| format!("cannot read input file {}", input.display()))?;
        let digest = Sha256::digest(&bytes);
        let mut scope = String::new();
        let _ = write!(
            scope,
            "input_sha256={digest:x}\nformat={}\nlayout={}\nlenient={}\n",
            self.format, self.layout, self.lenient
        );
        let _ = write!(
            scope,
            "train_start={:?}\ntrain_end={:?}\n",
            self.train_start, self.train_end
        );
        let _ = write!(
            scope,
            "window={}\nstride={}\ntop_k={}\nsimilarity={}\n",
            self.window, self.stride, self.top_k, self.similarity
        );
        Ok(scope)
    }

    /// First 16 hex digits of the scope digest; used in cache file names.
    pub fn cooccur_hash(&self) -> Result<String> {
        let scope = self.cooccur_scope()?;
        let digest = Sha256::digest(scope.as_bytes());
        Ok(format!("{digest:x}")[..16].to_string())
    }

    /// Digest covering everything that determines the trained embeddings.
    pub fn train_hash(&self) -> Result<String> {
        let mut scope = self.cooccur_scope()?;
        let _ = write!(
            scope,
            "alpha_pos={}\nalpha_neg={}\nloss={}\ndim={}\nepochs={}\nbatch_size={}\n",
            self.alpha_pos, self.alpha_neg, self.loss, self.dim, self.epochs, self.batch_size
        );
        let _ = write!(
            scope,
            "learning_rate={}\nnum_pos={}\nnum_neg={}\nlambda={}\nnorm_mode={}\n",
            self.learning_rate, self.num_pos, self.num_neg, self.lambda, self.norm_mode
        );
        let _ = write!(
            scope,
            "sched={}/{}/{}/{}\nseed={}\n",
            self.sched_factor, self.sched_patience, self.sched_rel_tol, self.sched_min_lr, self.seed
        );
        let digest = Sha256::digest(scope.as_bytes());
        Ok(format!("{digest:x}")[..16].to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn file_values_override_defaults() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            file,
            "# pipeline settings\nwindow = 10\nstride=2\nloss = sigmoid-softmax\nlenient = true"
        )
        .unwrap();
        let mut config = PipelineConfig::default();
        config.apply_file(file.path()).unwrap();
        assert_eq!(config.window, 10);
        assert_eq!(config.stride, 2);
        assert_eq!(config.loss, "sigmoid-softmax");
        assert!(config.lenient);
        assert_eq!(config.top_k, 5); // untouched default
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        let mut config = PipelineConfig::default();
        assert!(config.set("no_such_key", "1").is_err());
        assert!(config.set("window", "abc").is_err());
        assert!(config.set("lenient", "maybe").is_err());
    }

    #[test]
    fn hashes_track_relevant_fields() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "date,A,B\n2020-01-01,0.1,0.2\n2020-01-02,0.0,0.1").unwrap();
        let mut config = PipelineConfig {
            input: Some(file.path().to_path_buf()),
            ..PipelineConfig::default()
        };
        let hash_a = config.cooccur_hash().unwrap();
        config.seed = 99;
        assert_eq!(config.cooccur_hash().unwrap(), hash_a); // seed irrelevant to cooc
        config.window = 10;
        assert_ne!(config.cooccur_hash().unwrap(), hash_a);

        config.window = 22;
        let train_a = config.train_hash().unwrap();
        config.seed = 100;
        assert_ne!(config.train_hash().unwrap(), train_a);
    }
}
