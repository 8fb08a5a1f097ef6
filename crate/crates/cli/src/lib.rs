//! Command-line plumbing for `reparam`: experiment configs, model files and
//! the five commands (`train-sampler`, `train-pdf`, `sample`, `evaluate`,
//! `converge`).

pub mod commands;
pub mod config;
pub mod model_file;

pub use commands::exit_code;
pub use config::ExperimentConfig;
pub use model_file::ModelFile;

/// Environment variable that fixes the worker-thread count.
pub const THREADS_ENV: &str = "REPARAM_THREADS";
