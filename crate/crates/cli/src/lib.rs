//! Experiment commands for the `osdrl` binary.
//!
//! Each command reads a JSON config, applies flag overrides, writes CSV and
//! SVG files under `<out>/<experiment>/` together with a `report.json`, and
//! returns an [`Outcome`] that maps to the process exit code.

pub mod config;
pub mod frozenlake;
pub mod histograms;
pub mod instability;
pub mod output;
pub mod suites;
pub mod svg;
pub mod verify;

use std::path::PathBuf;

use serde::Serialize;

pub use config::Overrides;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] osdrl_core::Error),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("json output: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn config(field: &str, reason: impl std::fmt::Display) -> Self {
        CliError::Config(format!("{field}: {reason}"))
    }

    /// 2 for anything the user can fix in the config, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use osdrl_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::AtomCapExceeded { .. } | E::FixedPointMismatch { .. }) => 1,
            CliError::Core(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    PropertyFailure,
    /// The instability search ran out of candidates without a trigger.
    Inconclusive,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::PropertyFailure => 1,
            Status::Inconclusive => 3,
        }
    }
}

/// What a command reports back to `main`.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: Status,
    pub summary: String,
    pub dir: PathBuf,
}
