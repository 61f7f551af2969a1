//! Experiment configuration, orchestration and result files.

pub mod config;
pub mod experiment;
pub mod results;

pub use config::{ExperimentConfig, Method};
pub use experiment::{
    run_eval, run_figure, run_training, sweep, test_stream, train_params, Figure, TrainMethod,
};
pub use results::{emit_results, read_results, ResultRow, Slot};
