//! Per-stage run manifests: config snapshot, cache keys, timings and
//! output inventory, written as JSON next to the stage outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::PipelineConfig;

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub command: String,
    pub crate_version: &'static str,
    pub config_hash: Option<String>,
    pub config: &'a PipelineConfig,
    pub outputs: Vec<PathBuf>,
    pub warnings: Vec<String>,
    /// Stage-specific audit lines (e.g. the co-occurrence row-sum check).
    pub notes: Vec<String>,
    pub timings_ms: Vec<(String, u128)>,
    /// Wall-clock stamp; excluded from determinism comparisons.
    pub finished_at_unix_ms: u128,
}

pub struct StageTimer {
    started: Instant,
    laps: Vec<(String, u128)>,
    last: Instant,
}

impl StageTimer {
    pub fn start() -> Self {
        let now = Instant::now();
        StageTimer {
            started: now,
            laps: Vec::new(),
            last: now,
        }
    }

    pub fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.laps
            .push((name.to_string(), (now - self.last).as_millis()));
        self.last = now;
    }

    pub fn finish(mut self) -> Vec<(String, u128)> {
        self.laps.push((
            "total".to_string(),
            self.started.elapsed().as_millis(),
        ));
        self.laps
    }
}

#[allow(clippy::too_many_arguments)]
pub fn write_manifest(
    out_dir: &Path,
    command: &str,
    config: &PipelineConfig,
    config_hash: Option<String>,
    outputs: Vec<PathBuf>,
    warnings: Vec<String>,
    notes: Vec<String>,
    timings_ms: Vec<(String, u128)>,
) -> Result<PathBuf> {
    let manifest = Manifest {
        command: command.to_string(),
        crate_version: env!("CARGO_PKG_VERSION"),
        config_hash,
        config,
        outputs,
        warnings,
        notes,
        timings_ms,
        finished_at_unix_ms: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0),
    };
    let path = out_dir.join(format!("manifest_{}.json", command.replace(' ', "_")));
    let json = serde_json::to_string_pretty(&manifest).context("serializing manifest")?;
    std::fs::write(&path, json)
        .with_context(|| format!("writing manifest {}", path.display()))?;
    Ok(path)
}
