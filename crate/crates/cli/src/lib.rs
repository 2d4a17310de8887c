//! Experiment harness around `aggnn_core`: configuration, run manifests,
//! training, evaluation, transfer and permutation runs, and plot data.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plots;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use manifest::RunManifest;
