//! Configuration, orchestration and result persistence for interlacement
//! experiments. The `interlace-lab` binary is a thin wrapper over this crate.

pub mod config;
pub mod error;
pub mod oracle;
pub mod output;
pub mod run;

pub use config::{parse_config, parse_config_str, ExperimentConfig, Overrides};
pub use error::{CliError, Result};
pub use run::{execute, run};
