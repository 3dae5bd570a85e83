//! Command-line pipeline for learning and evaluating asset embeddings
//! from daily-return panels.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::PipelineConfig;

/// Errors split by exit code: 2 for configuration/usage problems, 1 for
/// runtime failures.
pub enum AppError {
    Usage(String),
    Runtime(anyhow::Error),
}

#[derive(Parser)]
#[command(
    name = "asset-embed",
    version,
    about = "Learn asset embeddings from return panels and evaluate them"
)]
struct Cli {
    /// Flat `key = value` config file; command-line flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cap worker threads for the parallel stages (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every stage that reads a panel.
#[derive(Args, Debug, Default)]
struct IoArgs {
    /// Input CSV panel
    #[arg(long)]
    input: Option<PathBuf>,
    /// Label CSV (`asset_id,sector,industry`)
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Input values: `prices` or `returns`
    #[arg(long)]
    format: Option<String>,
    /// CSV layout: `wide` or `long`
    #[arg(long)]
    layout: Option<String>,
    /// Drop assets with missing values instead of failing
    #[arg(long)]
    lenient: bool,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed for every seeded stage
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
struct WindowArgs {
    /// Sliding-window length in trading days
    #[arg(long)]
    window: Option<usize>,
    /// Window stride in trading days
    #[arg(long)]
    stride: Option<usize>,
    /// Top-k most similar assets counted per window
    #[arg(long = "top-k")]
    top_k: Option<usize>,
    /// Similarity measure (only `pearson`)
    #[arg(long)]
    similarity: Option<String>,
    /// Positive-region significance threshold
    #[arg(long = "alpha-pos")]
    alpha_pos: Option<f64>,
    /// Negative-region significance threshold
    #[arg(long = "alpha-neg")]
    alpha_neg: Option<f64>,
    /// First date of the training slice (inclusive)
    #[arg(long = "train-start")]
    train_start: Option<String>,
    /// Last date of the training slice (inclusive)
    #[arg(long = "train-end")]
    train_end: Option<String>,
}

#[derive(Args, Debug, Default)]
struct TrainArgs {
    /// Loss: individual-sigmoid, aggregate-sigmoid or sigmoid-softmax
    #[arg(long)]
    loss: Option<String>,
    /// Embedding dimension
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Drawn samples (positives + negatives) per optimizer step
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long = "learning-rate")]
    learning_rate: Option<f64>,
    /// Positive samples drawn per anchor per epoch
    #[arg(long = "num-pos")]
    num_pos: Option<usize>,
    /// Negative samples drawn per anchor per epoch
    #[arg(long = "num-neg")]
    num_neg: Option<usize>,
    /// Hypersphere regularization strength
    #[arg(long)]
    lambda: Option<f64>,
    /// Norm handling: penalty, hard-renorm or both
    #[arg(long = "norm-mode")]
    norm_mode: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Load, validate and canonicalize a return panel
    Ingest {
        #[command(flatten)]
        io: IoArgs,
    },
    /// Generate a synthetic block-factor panel
    Synth {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long)]
        blocks: Option<usize>,
        #[arg(long = "assets-per-block")]
        assets_per_block: Option<usize>,
        #[arg(long)]
        days: Option<usize>,
        #[arg(long = "factor-vol")]
        factor_vol: Option<f64>,
        #[arg(long = "idio-vol")]
        idio_vol: Option<f64>,
        #[arg(long = "cross-correlation")]
        cross_correlation: Option<f64>,
    },
    /// Build the windowed co-occurrence matrix and p-value histogram
    Cooccur {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        window: WindowArgs,
        /// Also dump the count matrix as CSV
        #[arg(long = "write-csv")]
        write_csv: bool,
        /// Also dump the per-pair sampling audit as CSV
        #[arg(long = "write-audit")]
        write_audit: bool,
        /// Histogram bin count
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Train embeddings (builds the co-occurrence cache on demand)
    Train {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        window: WindowArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Evaluate trained embeddings
    Eval {
        #[command(subcommand)]
        task: EvalTask,
    },
}

#[derive(Subcommand)]
enum EvalTask {
    /// Stratified k-fold sector classification
    Sector {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Dissimilar-asset hedging backtest against the Pearson baseline
    Hedge {
        #[command(flatten)]
        io: IoArgs,
        /// Similarity source: embedding, pearson or spearman
        #[arg(long)]
        source: Option<String>,
        /// Hedge pool size (most dissimilar assets per target)
        #[arg(long = "pool-size")]
        pool_size: Option<usize>,
        /// Trials per target
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long = "train-start")]
        train_start: Option<String>,
        #[arg(long = "train-end")]
        train_end: Option<String>,
        #[arg(long = "test-start")]
        test_start: Option<String>,
        #[arg(long = "test-end")]
        test_end: Option<String>,
    },
    /// Nearest neighbors of an anchor asset by cosine similarity
    Neighbors {
        #[command(flatten)]
        io: IoArgs,
        /// Anchor asset id
        #[arg(long)]
        anchor: Option<String>,
        /// Number of neighbors
        #[arg(long)]
        neighbors: Option<usize>,
    },
}

fn apply_io(config: &mut PipelineConfig, io: &IoArgs) {
    if let Some(input) = &io.input {
        config.input = Some(input.clone());
    }
    if let Some(labels) = &io.labels {
        config.labels = Some(labels.clone());
    }
    if let Some(format) = &io.format {
        config.format = format.clone();
    }
    if let Some(layout) = &io.layout {
        config.layout = layout.clone();
    }
    if io.lenient {
        config.lenient = true;
    }
    if let Some(out) = &io.out {
        config.out_dir = out.clone();
    }
    if let Some(seed) = io.seed {
        config.seed = seed;
    }
}

fn apply_window(config: &mut PipelineConfig, window: &WindowArgs) {
    if let Some(v) = window.window {
        config.window = v;
    }
    if let Some(v) = window.stride {
        config.stride = v;
    }
    if let Some(v) = window.top_k {
        config.top_k = v;
    }
    if let Some(v) = &window.similarity {
        config.similarity = v.clone();
    }
    if let Some(v) = window.alpha_pos {
        config.alpha_pos = v;
    }
    if let Some(v) = window.alpha_neg {
        config.alpha_neg = v;
    }
    if let Some(v) = &window.train_start {
        config.train_start = Some(v.clone());
    }
    if let Some(v) = &window.train_end {
        config.train_end = Some(v.clone());
    }
}

fn apply_train(config: &mut PipelineConfig, train: &TrainArgs) {
    if let Some(v) = &train.loss {
        config.loss = v.clone();
    }
    if let Some(v) = train.dim {
        config.dim = v;
    }
    if let Some(v) = train.epochs {
        config.epochs = v;
    }
    if let Some(v) = train.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = train.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = train.num_pos {
        config.num_pos = v;
    }
    if let Some(v) = train.num_neg {
        config.num_neg = v;
    }
    if let Some(v) = train.lambda {
        config.lambda = v;
    }
    if let Some(v) = &train.norm_mode {
        config.norm_mode = v.clone();
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    let mut config = PipelineConfig::default();
    if let Some(path) = &cli.config {
        config
            .apply_file(path)
            .map_err(|e| AppError::Usage(format!("{e:#}")))?;
    }

    #[cfg(feature = "parallel")]
    if let Some(threads) = cli.threads {
        // ignore the error when a pool already exists (tests, repeat calls)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    if cli.threads.is_some() {
        eprintln!("note: built without the `parallel` feature; --threads is ignored");
    }

    match &cli.command {
        Command::Ingest { io } => {
            apply_io(&mut config, io);
            commands::cmd_ingest(&config)
        }
        Command::Synth {
            io,
            blocks,
            assets_per_block,
            days,
            factor_vol,
            idio_vol,
            cross_correlation,
        } => {
            apply_io(&mut config, io);
            if let Some(v) = blocks {
                config.synth_blocks = *v;
            }
            if let Some(v) = assets_per_block {
                config.synth_assets_per_block = *v;
            }
            if let Some(v) = days {
                config.synth_days = *v;
            }
            if let Some(v) = factor_vol {
                config.synth_factor_vol = *v;
            }
            if let Some(v) = idio_vol {
                config.synth_idio_vol = *v;
            }
            if let Some(v) = cross_correlation {
                config.synth_cross_correlation = *v;
            }
            commands::cmd_synth(&config)
        }
        Command::Cooccur {
            io,
            window,
            write_csv,
            write_audit,
            bins,
        } => {
            apply_io(&mut config, io);
            apply_window(&mut config, window);
            if *write_csv {
                config.write_cooc_csv = true;
            }
            if *write_audit {
                config.write_audit_csv = true;
            }
            if let Some(v) = bins {
                config.histogram_bins = *v;
            }
            commands::cmd_cooccur(&config)
        }
        Command::Train { io, window, train } => {
            apply_io(&mut config, io);
            apply_window(&mut config, window);
            apply_train(&mut config, train);
            commands::cmd_train(&config)
        }
        Command::Eval { task } => match task {
            EvalTask::Sector { io, folds } => {
                apply_io(&mut config, io);
                if let Some(v) = folds {
                    config.folds = *v;
                }
                commands::cmd_eval_sector(&config)
            }
            EvalTask::Hedge {
                io,
                source,
                pool_size,
                repeats,
                train_start,
                train_end,
                test_start,
                test_end,
            } => {
                apply_io(&mut config, io);
                if let Some(v) = pool_size {
                    config.pool_size = *v;
                }
                if let Some(v) = repeats {
                    config.repeats = *v;
                }
                if let Some(v) = train_start {
                    config.train_start = Some(v.clone());
                }
                if let Some(v) = train_end {
                    config.train_end = Some(v.clone());
                }
                if let Some(v) = test_start {
                    config.test_start = Some(v.clone());
                }
                if let Some(v) = test_end {
                    config.test_end = Some(v.clone());
                }
                let source = source.clone().unwrap_or_else(|| "embedding".to_string());
                commands::cmd_eval_hedge(&config, &source)
            }
            EvalTask::Neighbors { io, anchor, neighbors } => {
                apply_io(&mut config, io);
                if let Some(v) = anchor {
                    config.anchor = Some(v.clone());
                }
                if let Some(v) = neighbors {
                    config.neighbors = *v;
                }
                commands::cmd_eval_neighbors(&config)
            }
        },
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(AppError::Usage(message)) => {
            eprintln!("error: {message}");
            std::process::exit(2);
        }
        Err(AppError::Runtime(err)) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}
