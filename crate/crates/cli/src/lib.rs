//! Configuration, experiment pipelines and artifact output behind the `plap`
//! command-line tool.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod failure;
pub mod output;

pub use config::{Experiment, ExperimentConfig, Overrides};
pub use experiments::{mms_study, run, MmsRow};
pub use failure::Failure;
pub use output::Manifest;
