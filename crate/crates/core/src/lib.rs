//! Stability measurement for ensembles of linear classifiers trained on
//! fixed feature vectors.
//!
//! The crate trains small softmax or least-squares heads with full-batch
//! gradient descent, measures how far an ensemble's final parameters spread
//! (the deviation L2 norm and the eigenvalues of the centered Gram matrix),
//! and calibrates Gaussian privatization noise from that spread. Training
//! supports weight decay, several gradient clipping policies, L1 pruning and
//! a reset schedule that restarts every member from a common point.
//!
//! All randomness flows from explicit `u64` seeds through [`rng`], so every
//! run is reproducible bit for bit regardless of the worker count.

pub mod dataset;
pub mod error;
pub mod experiments;
pub mod model;
pub mod noise;
pub mod rng;
pub mod stability;
pub mod trainer;
pub mod treenet;

pub use dataset::{
    load_dataset, resolve_subset, save_dataset, synthesize_dataset, DatasetFormat, FeatureDataset,
    SubsetMode, SubsetSpec,
};
pub use error::{Error, Result};
pub use experiments::{
    run_experiment, run_experiment_on, run_experiment_to_dir, ExperimentKind, ExperimentReport,
    ExperimentSpec,
};
pub use model::{accuracy, least_squares_closed_form, loss_and_gradient, LossKind, ParamVector};
pub use noise::{perturb_inputs, privatize, NoiseMode, NoiseSpec, NoiseWarning};
pub use stability::{deviation_report, DeviationReport, EigenSpectrum, SeriesPoint};
pub use trainer::{
    batch_gradient, dynamic_baseline_train, prune_l1, train, train_ensemble, ClippingPolicy,
    PruneConfig, PruneWhen, TrainTrace, TrainingConfig,
};
pub use treenet::{train_tree, tree_accuracy, tree_predict, Skeleton, TreeNet};
