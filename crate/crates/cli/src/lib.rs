//! Pipeline commands behind the `hifi` binary: `generate`, `train`,
//! `eval` and `infer`.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod model;
pub mod pool;
pub mod train;

pub use commands::{exit_code, run, Outcome};
pub use config::{Command, RunConfig};
