//! Contrastive asset embeddings from daily-return panels.
//!
//! The pipeline: load a return panel ([`panel`]), count top-k similarity
//! co-occurrences over sliding windows ([`similarity`]), turn the counts
//! into positive/negative sampling distributions via a one-proportion
//! z-test ([`sampler`]), train an embedding matrix against a contrastive
//! loss ([`trainer`]) and score it on sector classification and a hedging
//! backtest ([`eval`]). [`testkit`] provides synthetic panels with planted
//! structure and the brute-force oracles the test suites check against.
//!
//! The `parallel` feature (on by default) runs the co-occurrence build,
//! table construction and hedge trials on the rayon pool; results are
//! identical to the sequential fallback bit for bit.

pub mod eval;
pub mod mat;
pub mod panel;
pub mod rng;
pub mod sampler;
pub mod similarity;
pub mod testkit;
pub mod trainer;

pub use eval::{
    classify_sectors, hedge_experiment, knn_neighbors, realized_volatility, spearman,
    welch_t_test_one_sided, ClassificationReport, ClassifyConfig, EvalError, HedgeConfig,
    HedgeReport, SimilaritySource,
};
pub use panel::{
    attach_labels, load_panel, prices_to_returns, AssetLabel, CsvLayout, LoadOptions,
    LoadedPanel, MissingPolicy, PanelError, ReturnsPanel, ValueKind,
};
pub use sampler::{
    build_tables, p_value, z_statistic, SamplerError, SamplingTables, TestConfig,
};
pub use similarity::{
    build_cooccurrence, build_cooccurrence_serial, pearson, top_k_indices,
    window_similarities, CooccurrenceMatrix, SimilarityError, SimilarityMeasure, WindowConfig,
};
pub use testkit::{
    finite_difference_gradient, generate_factor_panel, naive_cooccurrence_oracle,
    FactorModelSpec,
};
pub use trainer::{
    train, EmbeddingMatrix, LossKind, NormMode, SchedulerConfig, TrainConfig, TrainError,
    TrainLog,
};
