//! Command implementations behind the `tegru` binary.

pub mod ablate;
pub mod config;
pub mod dataset;
pub mod eval_cmd;
pub mod preprocess;
pub mod train_cmd;
