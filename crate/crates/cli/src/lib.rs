//! Configuration, manifests and subcommands of the `fairrobust` tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod verify;

pub use commands::*;
pub use config::*;
pub use error::{CliError, CliResult};
pub use manifest::{sha256_hex, ManifestWriter, OutputFile, RunManifest, MANIFEST_FILE};
pub use verify::{intercept_checks, mc_checks, parse_suites, run_checks, CheckResult};
