//! Command-line driver for the car reproduction: configuration loading,
//! CSV/summary/SVG artifacts and the `simulate`, `verify` and `transform`
//! commands. `main.rs` only parses arguments and sets the exit code.

pub mod commands;
pub mod config;
pub mod floats;
pub mod plot;
pub mod status;

pub use commands::{simulate, transform, verify, Direction, SimulateOptions, TransformOptions};
pub use config::{ConfigError, LoadedConfig, Overrides, RunConfig, ValidatedRun};
pub use floats::FloatStyle;
pub use status::{CliError, ExitStatus};
