//! The pipeline stages behind each subcommand.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};

use asset_embed::eval::{
    classify_sectors, hedge_experiment, knn_neighbors, ClassifyConfig, HedgeConfig,
    SimilaritySource,
};
use asset_embed::panel::{
    attach_labels, load_panel, CsvLayout, LoadOptions, MissingPolicy, ReturnsPanel, ValueKind,
};
use asset_embed::sampler::{build_tables, write_histogram_csv, SamplingTables, TestConfig};
use asset_embed::similarity::{build_cooccurrence, CooccurrenceMatrix, WindowConfig};
use asset_embed::testkit::{generate_factor_panel, FactorModelSpec};
use asset_embed::trainer::{
    train, EmbeddingMatrix, LossKind, NormMode, SchedulerConfig, TrainConfig,
};

use crate::config::PipelineConfig;
use crate::manifest::{write_manifest, StageTimer};
use crate::AppError;

fn usage(message: impl Into<String>) -> AppError {
    AppError::Usage(message.into())
}

impl From<anyhow::Error> for AppError {
    fn from(err: anyhow::Error) -> Self {
        AppError::Runtime(err)
    }
}

fn ensure_out_dir(config: &PipelineConfig) -> Result<(), AppError> {
    std::fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("cannot create output directory {}", config.out_dir.display()))
        .map_err(AppError::from)
}

fn parse_value_kind(config: &PipelineConfig) -> Result<ValueKind, AppError> {
    match config.format.as_str() {
        "prices" => Ok(ValueKind::Prices),
        "returns" => Ok(ValueKind::Returns),
        other => Err(usage(format!(
            "unknown format {other:?}; expected `prices` or `returns`"
        ))),
    }
}

fn parse_layout(config: &PipelineConfig) -> Result<CsvLayout, AppError> {
    match config.layout.as_str() {
        "wide" => Ok(CsvLayout::Wide),
        "long" => Ok(CsvLayout::Long),
        other => Err(usage(format!(
            "unknown layout {other:?}; expected `wide` or `long`"
        ))),
    }
}

fn check_similarity(config: &PipelineConfig) -> Result<(), AppError> {
    match config.similarity.as_str() {
        "pearson" => Ok(()),
        other => Err(usage(format!(
            "unknown similarity measure {other:?}; only `pearson` is available"
        ))),
    }
}

/// Loads the configured input panel and attaches labels when configured.
/// Returns the panel plus any assets dropped in lenient mode.
fn load_input(config: &PipelineConfig) -> Result<(ReturnsPanel, Vec<String>), AppError> {
    let input = config
        .input
        .as_ref()
        .ok_or_else(|| usage("no input file configured (set `input` or pass --input)"))?;
    let options = LoadOptions {
        kind: parse_value_kind(config)?,
        layout: parse_layout(config)?,
        missing: if config.lenient {
            MissingPolicy::DropAssets
        } else {
            MissingPolicy::Strict
        },
    };
    let loaded = load_panel(input, &options)
        .with_context(|| format!("loading panel from {}", input.display()))?;
    let mut panel = loaded.panel;
    if let Some(labels_path) = &config.labels {
        panel = attach_labels(panel, labels_path)
            .with_context(|| format!("attaching labels from {}", labels_path.display()))?;
    }
    Ok((panel, loaded.dropped))
}

/// Restricts the panel to the configured training range, if any.
fn training_slice(panel: &ReturnsPanel, config: &PipelineConfig) -> Result<ReturnsPanel, AppError> {
    match (&config.train_start, &config.train_end) {
        (None, None) => Ok(panel.clone()),
        (start, end) => {
            let first = panel.dates().first().cloned().unwrap_or_default();
            let last = panel.dates().last().cloned().unwrap_or_default();
            let start = start.clone().unwrap_or(first);
            let end = end.clone().unwrap_or(last);
            panel
                .slice(&start, &end)
                .with_context(|| format!("slicing panel to training range [{start}, {end}]"))
                .map_err(AppError::from)
        }
    }
}

fn window_config(config: &PipelineConfig) -> WindowConfig {
    WindowConfig::new(config.window, config.stride, config.top_k)
}

fn test_config(config: &PipelineConfig) -> TestConfig {
    TestConfig {
        alpha_pos: config.alpha_pos,
        alpha_neg: config.alpha_neg,
    }
}

fn train_config(config: &PipelineConfig) -> Result<TrainConfig, AppError> {
    let loss = LossKind::parse(&config.loss).ok_or_else(|| {
        usage(format!(
            "unknown loss {:?}; expected individual-sigmoid, aggregate-sigmoid or sigmoid-softmax",
            config.loss
        ))
    })?;
    let norm_mode = NormMode::parse(&config.norm_mode).ok_or_else(|| {
        usage(format!(
            "unknown norm mode {:?}; expected penalty, hard-renorm or both",
            config.norm_mode
        ))
    })?;
    Ok(TrainConfig {
        loss,
        dim: config.dim,
        epochs: config.epochs,
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
        num_pos: config.num_pos,
        num_neg: config.num_neg,
        lambda: config.lambda,
        norm_mode,
        scheduler: SchedulerConfig {
            factor: config.sched_factor,
            patience: config.sched_patience,
            rel_tol: config.sched_rel_tol,
            min_lr: config.sched_min_lr,
        },
        seed: config.seed,
    })
}

/// Maps config-shaped failures from the core onto exit code 2.
fn classify_core_error(err: anyhow::Error) -> AppError {
    use asset_embed::similarity::SimilarityError;
    let message = format!("{err:#}");
    if let Some(sim) = err.downcast_ref::<SimilarityError>() {
        if matches!(
            sim,
            SimilarityError::BadWindow { .. }
                | SimilarityError::BadStride
                | SimilarityError::BadTopK { .. }
        ) {
            return usage(message);
        }
    }
    if let Some(sampler) = err.downcast_ref::<asset_embed::SamplerError>() {
        if matches!(sampler, asset_embed::SamplerError::BadThresholds { .. }) {
            return usage(message);
        }
    }
    if let Some(train) = err.downcast_ref::<asset_embed::TrainError>() {
        if matches!(train, asset_embed::TrainError::BadConfig(_)) {
            return usage(message);
        }
    }
    AppError::Runtime(err)
}

fn cooc_cache_path(config: &PipelineConfig, hash: &str) -> PathBuf {
    config.out_dir.join(format!("cooc_{hash}.bin"))
}

/// Build (or reload) the co-occurrence matrix for the training slice.
fn obtain_cooccurrence(
    config: &PipelineConfig,
    panel: &ReturnsPanel,
    timer: &mut StageTimer,
    notes: &mut Vec<String>,
) -> Result<(CooccurrenceMatrix, String, PathBuf), AppError> {
    check_similarity(config)?;
    let hash = config.cooccur_hash().map_err(AppError::Runtime)?;
    let cache = cooc_cache_path(config, &hash);
    let window = window_config(config);
    if cache.is_file() {
        let cooc = CooccurrenceMatrix::read_binary(&cache, panel.asset_ids().to_vec())
            .with_context(|| format!("reading co-occurrence cache {}", cache.display()))?;
        notes.push(format!("co-occurrence cache hit: {}", cache.display()));
        timer.lap("cooccurrence_load");
        return Ok((cooc, hash, cache));
    }
    let cooc = build_cooccurrence(panel, &window)
        .map_err(|e| classify_core_error(anyhow::Error::new(e)))?;
    timer.lap("cooccurrence_build");
    cooc.write_binary(&cache)
        .with_context(|| format!("writing co-occurrence cache {}", cache.display()))?;
    timer.lap("cooccurrence_write");
    Ok((cooc, hash, cache))
}

fn row_sum_audit(cooc: &CooccurrenceMatrix) -> String {
    let expected = cooc.config().top_k as u64 * cooc.num_windows() as u64;
    let all_match = (0..cooc.n_assets()).all(|i| cooc.row_sum(i) == expected);
    format!(
        "row-sum audit: {} ({} windows, k={}, expected row sum {})",
        if all_match { "ok" } else { "FAILED" },
        cooc.num_windows(),
        cooc.config().top_k,
        expected
    )
}

pub fn cmd_ingest(config: &PipelineConfig) -> Result<(), AppError> {
    ensure_out_dir(config)?;
    let mut timer = StageTimer::start();
    let (panel, dropped) = load_input(config)?;
    timer.lap("load");
    let out = config.out_dir.join("panel.csv");
    panel
        .write_wide_csv(&out)
        .context("writing canonical panel")?;
    timer.lap("write");
    let mut warnings = Vec::new();
    if !dropped.is_empty() {
        warnings.push(format!(
            "dropped {} incomplete assets: {}",
            dropped.len(),
            dropped.join(", ")
        ));
    }
    let labeled = panel
        .labels()
        .map(|l| l.len())
        .unwrap_or(0);
    println!(
        "ingested {} assets x {} dates ({} labeled) -> {}",
        panel.n_assets(),
        panel.n_dates(),
        labeled,
        out.display()
    );
    write_manifest(
        &config.out_dir,
        "ingest",
        config,
        None,
        vec![out],
        warnings,
        vec![],
        timer.finish(),
    )?;
    Ok(())
}

pub fn cmd_synth(config: &PipelineConfig) -> Result<(), AppError> {
    ensure_out_dir(config)?;
    let mut timer = StageTimer::start();
    let spec = FactorModelSpec {
        num_blocks: config.synth_blocks,
        assets_per_block: config.synth_assets_per_block,
        num_days: config.synth_days,
        factor_vol: config.synth_factor_vol,
        idio_vol: config.synth_idio_vol,
        cross_block_correlation: config.synth_cross_correlation,
        seed: config.seed,
    };
    let panel = generate_factor_panel(&spec)
        .map_err(|e| usage(format!("invalid synthetic spec: {e}")))?;
    timer.lap("generate");
    let panel_path = config.out_dir.join("panel.csv");
    panel.write_wide_csv(&panel_path).context("writing panel")?;
    let labels_path = config.out_dir.join("labels.csv");
    let mut writer = csv::Writer::from_path(&labels_path).context("writing labels")?;
    writer
        .write_record(["asset_id", "sector", "industry"])
        .context("writing labels header")?;
    if let Some(labels) = panel.labels() {
        for (id, label) in labels {
            writer
                .write_record([id.as_str(), label.sector.as_str(), label.industry.as_str()])
                .context("writing label row")?;
        }
    }
    writer.flush().context("flushing labels")?;
    timer.lap("write");
    println!(
        "generated {} assets x {} dates -> {} / {}",
        panel.n_assets(),
        panel.n_dates(),
        panel_path.display(),
        labels_path.display()
    );
    write_manifest(
        &config.out_dir,
        "synth",
        config,
        None,
        vec![panel_path, labels_path],
        vec![],
        vec![],
        timer.finish(),
    )?;
    Ok(())
}

pub fn cmd_cooccur(config: &PipelineConfig) -> Result<(), AppError> {
    ensure_out_dir(config)?;
    let mut timer = StageTimer::start();
    let mut notes = Vec::new();
    let (panel, dropped) = load_input(config)?;
    let panel = training_slice(&panel, config)?;
    timer.lap("load");
    let (cooc, hash, cache) = obtain_cooccurrence(config, &panel, &mut timer, &mut notes)?;
    notes.push(row_sum_audit(&cooc));
    let mut outputs = vec![cache];

    if config.write_cooc_csv {
        let csv_path = config.out_dir.join(format!("cooc_{hash}.csv"));
        cooc.write_csv(&csv_path).context("writing count matrix")?;
        outputs.push(csv_path);
    }

    let tables = build_tables(&cooc, &test_config(config))
        .map_err(|e| classify_core_error(anyhow::Error::new(e)))?;
    timer.lap("tables");
    let histogram = tables
        .p_value_histogram(config.histogram_bins)
        .map_err(|e| usage(format!("{e}")))?;
    let hist_path = config.out_dir.join("pvalue_histogram.csv");
    write_histogram_csv(&histogram, &hist_path).context("writing histogram")?;
    outputs.push(hist_path);
    if config.write_audit_csv {
        let audit_path = config.out_dir.join("sampling_tables.csv");
        tables.write_csv(&audit_path).context("writing audit")?;
        outputs.push(audit_path);
    }
    timer.lap("write");

    let mut warnings = Vec::new();
    if !dropped.is_empty() {
        warnings.push(format!("dropped {} incomplete assets", dropped.len()));
    }
    let unsupported = tables.anchors_without_support();
    if !unsupported.is_empty() {
        warnings.push(format!(
            "{} anchors have an empty positive or negative sampling set",
            unsupported.len()
        ));
    }
    println!(
        "co-occurrence over {} windows ({} assets); cache key {hash}",
        cooc.num_windows(),
        cooc.n_assets()
    );
    write_manifest(
        &config.out_dir,
        "cooccur",
        config,
        Some(hash),
        outputs,
        warnings,
        notes,
        timer.finish(),
    )?;
    Ok(())
}

/// Builds sampling tables for the training slice, reusing the cache.
fn tables_for_training(
    config: &PipelineConfig,
    timer: &mut StageTimer,
    notes: &mut Vec<String>,
) -> Result<(ReturnsPanel, SamplingTables), AppError> {
    let (panel, _) = load_input(config)?;
    let sliced = training_slice(&panel, config)?;
    timer.lap("load");
    let (cooc, _, _) = obtain_cooccurrence(config, &sliced, timer, notes)?;
    notes.push(row_sum_audit(&cooc));
    let tables = build_tables(&cooc, &test_config(config))
        .map_err(|e| classify_core_error(anyhow::Error::new(e)))?;
    timer.lap("tables");
    Ok((panel, tables))
}

pub fn cmd_train(config: &PipelineConfig) -> Result<(), AppError> {
    ensure_out_dir(config)?;
    let mut timer = StageTimer::start();
    let mut notes = Vec::new();
    let (_, tables) = tables_for_training(config, &mut timer, &mut notes)?;
    let train_cfg = train_config(config)?;
    let (embedding, log) = train(&tables, &train_cfg)
        .map_err(|e| classify_core_error(anyhow::Error::new(e)))?;
    timer.lap("train");

    let csv_path = config.out_dir.join("embeddings.csv");
    let bin_path = config.out_dir.join("embeddings.bin");
    let log_path = config.out_dir.join("train_log.csv");
    embedding.write_csv(&csv_path).context("writing embeddings csv")?;
    embedding.write_binary(&bin_path).context("writing embeddings bin")?;
    log.write_csv(&log_path).context("writing train log")?;
    timer.lap("write");

    let mut warnings = Vec::new();
    if !log.skipped_anchors.is_empty() {
        warnings.push(format!(
            "skipped {} anchors without sampling support",
            log.skipped_anchors.len()
        ));
    }
    let final_loss = log.epochs.last().map(|e| e.total_loss).unwrap_or(f64::NAN);
    println!(
        "trained {} x {} embeddings over {} epochs (final loss {final_loss:.6})",
        embedding.n_assets(),
        embedding.dim(),
        config.epochs
    );
    let hash = config.train_hash().map_err(AppError::Runtime)?;
    write_manifest(
        &config.out_dir,
        "train",
        config,
        Some(hash),
        vec![csv_path, bin_path, log_path],
        warnings,
        notes,
        timer.finish(),
    )?;
    Ok(())
}

fn load_embeddings(config: &PipelineConfig) -> Result<EmbeddingMatrix, AppError> {
    let path = config.out_dir.join("embeddings.csv");
    if !path.is_file() {
        return Err(usage(format!(
            "no embeddings at {}; run `asset-embed train` first",
            path.display()
        )));
    }
    EmbeddingMatrix::read_csv(&path)
        .with_context(|| format!("reading embeddings {}", path.display()))
        .map_err(AppError::from)
}

pub fn cmd_eval_sector(config: &PipelineConfig) -> Result<(), AppError> {
    ensure_out_dir(config)?;
    let mut timer = StageTimer::start();
    let (panel, _) = load_input(config)?;
    let labels = panel
        .labels()
        .ok_or_else(|| usage("sector evaluation needs a label file (pass --labels)"))?
        .clone();
    let embedding = load_embeddings(config)?;
    timer.lap("load");
    let report = classify_sectors(
        &embedding,
        &labels,
        &ClassifyConfig {
            folds: config.folds,
            seed: config.seed,
            ..ClassifyConfig::default()
        },
    )
    .map_err(|e| match e {
        asset_embed::EvalError::NoLabels | asset_embed::EvalError::TooFewClasses(_) => {
            usage(format!("{e}"))
        }
        asset_embed::EvalError::BadFoldCount(_) => usage(format!("{e}")),
        other => AppError::Runtime(anyhow::Error::new(other)),
    })?;
    timer.lap("classify");

    let report_path = config.out_dir.join("sector_report.csv");
    let mut writer = csv::Writer::from_path(&report_path).context("writing sector report")?;
    writer
        .write_record(["fold", "accuracy", "macro_f1"])
        .context("writing header")?;
    for fold in &report.folds {
        writer
            .write_record(&[
                fold.fold.to_string(),
                format!("{}", fold.accuracy),
                format!("{}", fold.macro_f1),
            ])
            .context("writing fold row")?;
    }
    writer
        .write_record(&[
            "mean".to_string(),
            format!("{}", report.mean_accuracy),
            format!("{}", report.mean_macro_f1),
        ])
        .context("writing mean row")?;
    writer.flush().context("flushing report")?;

    let mut summary = String::new();
    let _ = writeln!(summary, "sector classification ({} folds)", config.folds);
    let _ = writeln!(summary, "classes: {}", report.classes.join(", "));
    if !report.dropped_classes.is_empty() {
        let _ = writeln!(
            summary,
            "dropped (fewer members than folds): {}",
            report.dropped_classes.join(", ")
        );
    }
    for fold in &report.folds {
        let _ = writeln!(
            summary,
            "fold {}: accuracy {:.4}, macro-F1 {:.4}",
            fold.fold, fold.accuracy, fold.macro_f1
        );
    }
    let _ = writeln!(
        summary,
        "mean accuracy {:.4}, mean macro-F1 {:.4}",
        report.mean_accuracy, report.mean_macro_f1
    );
    let summary_path = config.out_dir.join("sector_summary.txt");
    std::fs::write(&summary_path, &summary).context("writing summary")?;
    print!("{summary}");
    timer.lap("write");

    write_manifest(
        &config.out_dir,
        "eval_sector",
        config,
        None,
        vec![report_path, summary_path],
        vec![],
        vec![],
        timer.finish(),
    )?;
    Ok(())
}

pub fn cmd_eval_hedge(config: &PipelineConfig, source_name: &str) -> Result<(), AppError> {
    ensure_out_dir(config)?;
    let mut timer = StageTimer::start();
    let (panel, _) = load_input(config)?;
    let (test_start, test_end) = match (&config.test_start, &config.test_end) {
        (Some(s), Some(e)) => (s.clone(), e.clone()),
        _ => {
            return Err(usage(
                "hedge evaluation needs a test range (set test_start and test_end)",
            ))
        }
    };
    // train period: explicit range, otherwise everything before the test slice
    let train_start = config
        .train_start
        .clone()
        .unwrap_or_else(|| panel.dates()[0].clone());
    let train_end = match config.train_end.clone() {
        Some(end) => end,
        None => panel
            .dates()
            .iter()
            .rev()
            .find(|d| d.as_str() < test_start.as_str())
            .cloned()
            .ok_or_else(|| usage("no dates precede the configured test range"))?,
    };
    let train_panel = panel
        .slice(&train_start, &train_end)
        .context("slicing training range")?;
    let test_panel = panel
        .slice(&test_start, &test_end)
        .context("slicing test range")?;
    timer.lap("load");

    let embedding;
    let source = match source_name {
        "embedding" => {
            embedding = load_embeddings(config)?;
            SimilaritySource::Embedding(&embedding)
        }
        "pearson" => SimilaritySource::Pearson,
        "spearman" => SimilaritySource::Spearman,
        other => {
            return Err(usage(format!(
                "unknown similarity source {other:?}; expected embedding, pearson or spearman"
            )))
        }
    };
    let hedge_cfg = HedgeConfig {
        pool_size: config.pool_size,
        repeats: config.repeats,
        seed: config.seed,
        periods_per_year: 252.0,
    };
    let report = hedge_experiment(&train_panel, &test_panel, &source, &hedge_cfg).map_err(
        |e| match e {
            asset_embed::EvalError::PoolTooLarge { .. } => usage(format!("{e}")),
            other => AppError::Runtime(anyhow::Error::new(other)),
        },
    )?;
    timer.lap("hedge");

    let trials_path = config.out_dir.join("hedge_trials.csv");
    report
        .write_trials_csv(&trials_path)
        .context("writing hedge trials")?;

    let significant = report.welch.p_value < 0.01;
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "hedging backtest: {} targets x {} trials, pool size {}",
        panel.n_assets(),
        config.repeats,
        config.pool_size
    );
    let _ = writeln!(
        summary,
        "train [{train_start}, {train_end}], test [{test_start}, {test_end}]"
    );
    let _ = writeln!(
        summary,
        "{} mean annualized volatility: {:.6} ({:.2}%)",
        report.method_name,
        report.method_mean,
        100.0 * report.method_mean
    );
    let _ = writeln!(
        summary,
        "pearson baseline mean annualized volatility: {:.6} ({:.2}%)",
        report.baseline_mean,
        100.0 * report.baseline_mean
    );
    let _ = writeln!(
        summary,
        "one-sided Welch test (method < pearson): t = {:.4}, df = {:.2}, p = {:.3e}{}",
        report.welch.t,
        report.welch.degrees_of_freedom,
        report.welch.p_value,
        if significant {
            " (significant at alpha = 0.01)"
        } else {
            " (not significant at alpha = 0.01)"
        }
    );
    let summary_path = config.out_dir.join("hedge_summary.txt");
    std::fs::write(&summary_path, &summary).context("writing summary")?;
    print!("{summary}");
    timer.lap("write");

    write_manifest(
        &config.out_dir,
        "eval_hedge",
        config,
        None,
        vec![trials_path, summary_path],
        vec![],
        vec![],
        timer.finish(),
    )?;
    Ok(())
}

pub fn cmd_eval_neighbors(config: &PipelineConfig) -> Result<(), AppError> {
    ensure_out_dir(config)?;
    let mut timer = StageTimer::start();
    let anchor = config
        .anchor
        .clone()
        .ok_or_else(|| usage("neighbors evaluation needs an anchor asset (pass --anchor)"))?;
    let embedding = load_embeddings(config)?;
    // labels are optional decoration here
    let labels = match load_input(config) {
        Ok((panel, _)) => panel.labels().cloned(),
        Err(_) => None,
    };
    timer.lap("load");
    let neighbors = knn_neighbors(&embedding, &anchor, config.neighbors).map_err(|e| match e {
        asset_embed::EvalError::UnknownAsset(_) | asset_embed::EvalError::TooManyNeighbors { .. } => {
            usage(format!("{e}"))
        }
        other => AppError::Runtime(anyhow::Error::new(other)),
    })?;
    timer.lap("rank");

    let path = config
        .out_dir
        .join(format!("neighbors_{}.csv", anchor.replace('/', "_")));
    let mut writer = csv::Writer::from_path(&path).context("writing neighbors")?;
    writer
        .write_record(["rank", "asset_id", "cosine_similarity", "sector", "industry"])
        .context("writing header")?;
    println!("nearest neighbors of {anchor}:");
    for (rank, (id, sim)) in neighbors.iter().enumerate() {
        let label = labels.as_ref().and_then(|l| l.get(id));
        let sector = label.map(|l| l.sector.clone()).unwrap_or_default();
        let industry = label.map(|l| l.industry.clone()).unwrap_or_default();
        writer
            .write_record(&[
                (rank + 1).to_string(),
                id.clone(),
                format!("{sim}"),
                sector.clone(),
                industry,
            ])
            .context("writing neighbor row")?;
        println!("  {:>2}. {id}  cosine {sim:.4}  {sector}", rank + 1);
    }
    writer.flush().context("flushing neighbors")?;
    timer.lap("write");

    write_manifest(
        &config.out_dir,
        "eval_neighbors",
        config,
        None,
        vec![path],
        vec![],
        vec![],
        timer.finish(),
    )?;
    Ok(())
}
