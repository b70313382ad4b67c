//! Experiment runner library behind the `exp-sq-lab` binary: strict JSON
//! configs, named experiments with machine-readable CSV/JSON artifacts,
//! manifests with artifact hashes, and bit-exact replay.

pub mod config;
pub mod experiments;
pub mod manifest;
pub mod runner;

pub use config::{ExperimentConfig, ExperimentKind};
pub use manifest::Manifest;
pub use runner::{replay, run, Outcome, Overrides};
