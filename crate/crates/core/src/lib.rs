//! Split conformal prediction for multi-class classification with
//! class-conditional coverage.
//!
//! Works on precomputed classifier probability matrices and provides three
//! calibrators: a single marginal threshold, one threshold per class, and
//! rank-calibrated class-wise thresholds that additionally restrict each class
//! to the top `k_hat(y)` predicted labels. Evaluation metrics, diagnostics and
//! a synthetic data generator round out the pipeline.
//!
//! All randomness is indexed by `(seed, example)`, so every result is
//! reproducible and independent of the rayon thread count.

pub mod calibration;
pub mod cli;
pub mod data;
pub mod error;
pub mod io;
pub mod metrics;
pub mod prediction;
pub mod rng;
pub mod scores;
pub mod synthgen;

pub use calibration::{
    calibrate, calibrate_ccp, calibrate_marginal, calibrate_rc3p, configure_rank, conformal_quantile,
    effective_alpha, effective_level, CalibrationModel, ClassRecord, Method, RankOption, RankOverrides,
};
pub use data::{
    estimate_topk_errors, label_rank, partition_by_class, ClassPartition, LabelVector, ProbabilityMatrix,
    TopKErrorTable,
};
pub use error::{Error, Result};
pub use metrics::{evaluate, rank_frequency, sigma_condition, theorem2_check, MetricsReport};
pub use prediction::{predict, predict_ccp, predict_marginal, predict_rc3p, PredictionBatch, PredictionSet};
pub use scores::{score_all, score_pair, score_true_labels, ScoreConfig, ScoreKind, ScoreMatrix};
pub use synthgen::{decay_counts, oracle_coverage, sample_world, DecayKind, DecaySpec, SyntheticWorld};
