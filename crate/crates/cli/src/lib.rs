//! Batch experiment runner: TOML configs in, CSV tables and a JSON manifest
//! out. Outputs depend only on the config and seed, never on the worker
//! count.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod gamma;
pub mod run;
pub mod validate;

pub use config::{ExperimentConfig, Kind};
pub use gamma::{gamma_check, GammaRow};
pub use run::{replay, run, RunError, RunManifest, RunReport};
pub use validate::{plan, validate, Finding, Plan, Severity};

/// Environment variable naming the default output directory.
pub const OUT_DIR_VAR: &str = "RWRE_OUT_DIR";
