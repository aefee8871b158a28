//! Library side of the `secfu` command: configuration parsing and the run
//! modes, kept separate from argument handling so they can be tested
//! directly.

mod config;
mod run;

pub use config::{parse_config, parse_config_with, ConfigError, Overrides, RunConfig, RunMode, DEFAULT_OUT};
pub use run::{run, ExitCode, RunOutcome, REFERENCE_CLUSTER_SIZE};
