//! Unsupervised anomaly detection by deep metric learning.
//!
//! The engine learns a compact embedding of unlabeled data with a small
//! tanh network trained to pull instances close together — either pairwise
//! (instance closeness) or toward the batch's latent center (center
//! closeness); the two objectives coincide when the center is the latent
//! mean. Contaminated training data is handled by two self-supervised
//! filters that the trainer re-derives from its own distances: per-epoch
//! data distillation keeps the fraction of instances nearest the latent
//! center, and per-batch mining keeps only the hardest (most distant)
//! loss terms. After training, an instance's anomaly score is its squared
//! latent distance to the training center — a constant-time ranking
//! equivalent to averaging distances against a retrieval set.
//!
//! Modules:
//!
//! * [`matrix`] — minimal row-major dense matrix.
//! * [`net`] — tanh multi-layer metric network, backprop, Adam.
//! * [`losses`] — closeness losses, distance sets, weight decay.
//! * [`mining`] — distillation and hard-term mining by distance rank.
//! * [`scoring`] — center / dissimilarity scorers and thresholding.
//! * [`trainer`] — the full training loop with validation-based early
//!   stopping.
//! * [`evaluation`] — rank-based ROC-AUC and repeated stratified
//!   cross-validation.
//! * [`data`] — CSV IO, normalization, synthetic data, model files.
//! * [`seeds`] — deterministic seed derivation for every random stream.
//!
//! Every random choice flows from explicit `u64` seeds through one
//! counter-based generator, so training, evaluation, and file artifacts
//! are bit-reproducible across runs and platforms.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod matrix;
pub mod mining;
pub mod net;
pub mod scoring;
pub mod seeds;
pub mod trainer;

pub use data::{
    fit_normalizer, load_csv, load_model, save_csv, save_model, synth_two_gaussians, Dataset,
    LabelColumn, ModelArtifact, Normalizer, MODEL_FORMAT_VERSION,
};
pub use error::{Error, Result};
pub use evaluation::{
    roc_auc, run_all_settings, run_fold, run_setting, stratified_folds, CvPlan, CvReport, CvRun,
    FoldOutcome, Setting,
};
pub use losses::{
    center_loss, instance_loss, latent_center, squared_distance, LossKind, PairConvention,
};
pub use matrix::Matrix;
pub use mining::{distill, mine, selection_count, DistilledSet, MinedSelection};
pub use net::{adam_step, AdamHyper, AdamState, GradientSet, Layer, MetricNet};
pub use scoring::{build_scorer, decide, Scorer, ScoringMode};
pub use trainer::{train, train_from, EpochStats, TrainConfig, TrainReport, ValidationCadence};
