//! Experiment front end: configuration parsing and the penetration sweep.

pub mod config;
pub mod experiment;

pub use config::{parse_config, Config, ConfigError, DragMultiplier, GapPath};
pub use experiment::{run_experiment, run_sweep, ExperimentError, RunSpec, Sweep};
