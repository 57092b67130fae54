//! Configuration, scenarios, and result serialization for the CLI.

pub mod config;
pub mod io;
pub mod record;
pub mod scenario;

pub use config::{config_hash, ConfigError, ExperimentConfig};
pub use record::RunRecord;
pub use scenario::{emit_plotdata, execute, run_scenario, HarnessError, RunOutput, Scenario};
