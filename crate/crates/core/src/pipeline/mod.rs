//! Experiment orchestration behind the CLI: simulate, train, eval, report.

pub mod config;
pub mod eval;
pub mod layout;
pub mod manifest;
pub mod report;
pub mod simulate;
pub mod train;

pub use config::ExperimentConfig;
pub use layout::Layout;
pub use train::{Stage, TrainOptions};
