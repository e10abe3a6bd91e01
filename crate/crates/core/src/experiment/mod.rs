//! Configured, seeded experiments and their CSV output.

pub mod config;
pub mod presets;
pub mod runner;

pub use config::{ExperimentConfig, ExperimentKind, SchemeEntry, SweepAxis, SweepTarget, UserConfig};
pub use presets::{preset, PRESET_NAMES};
pub use runner::{build_scenario, run_experiment, sweep_points, write_outputs, ExperimentOutput, Manifest, Table};
