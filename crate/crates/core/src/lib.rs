//! Constraint guided gradient descent (CGGD) for dense regression networks.
//!
//! Training under a conjunction of hard inequality constraints
//! `C_i(x, ŷ) ≤ 0`: whenever a constraint is violated the ordinary gradient
//! step is augmented with a unit constraint direction scaled by
//! `ρ · max{ε, ‖∇L‖}`, so the constraints always dominate the loss.
//!
//! Modules:
//!
//! * [`autodiff`]: tensors, the reverse-mode tape, gradient vectors.
//! * [`model`]: seeded ReLU networks and JSON checkpoints.
//! * [`constraints`]: affine constraints, satisfaction ratio, constraint directions.
//! * [`optim`]: the update step, step-size schedules, baselines and the trainer.
//! * [`scalar_lab`]: the one-dimensional polynomial example and the step-size
//!   and distance-contraction property harnesses.
//! * [`experiment`]: data ingestion, normalization, multi-seed runs and reports.

// `!(x > 0.0)` style guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod constraints;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod scalar_lab;

pub use autodiff::{global_norm, GradientVector, NodeId, Tape, Tensor};
pub use constraints::{
    satisfaction_ratio, weight_direction, weight_direction_from, ConstraintSet, DirectionOracle,
    LinearConstraint, OutputScale,
};
pub use dataset::{Split, TrainingData};
pub use error::{Error, Result};
pub use model::{init_mlp, Checkpoint, Forward, MlpModel};
pub use optim::{
    cggd_step, fuzzy_loss, gradient_step, lemma1_next_eta, train, train_observed, BatchMode, CggdConfig,
    FuzzyConfig, History, Method, Selection, StepSchedule, TrainConfig, TrainOutcome,
};
