//! Loading experiment configs. Flags override the file, which overrides
//! the defaults.

use std::path::{Path, PathBuf};

use osdrl_core::distributions::Grid;
use serde::de::DeserializeOwned;

use crate::{CliError, Result};

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Common handling for the per-command config structs.
pub trait ExperimentConfig: DeserializeOwned + Default {
    const NAME: &'static str;

    fn experiment(&self) -> Option<&str>;

    fn apply(&mut self, overrides: &Overrides);

    fn validate(&self) -> Result<()>;
}

pub fn parse<C: ExperimentConfig>(text: &str, overrides: &Overrides) -> Result<C> {
    let mut cfg: C = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(name) = cfg.experiment() {
        if name != C::NAME {
            return Err(CliError::config(
                "experiment",
                format!("config is for `{name}`, command is `{}`", C::NAME),
            ));
        }
    }
    cfg.apply(overrides);
    cfg.validate()?;
    Ok(cfg)
}

pub fn load<C: ExperimentConfig>(path: &Path, overrides: &Overrides) -> Result<C> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text, overrides)
}

pub fn default_out() -> PathBuf {
    PathBuf::from("out")
}

pub fn grid(field: &str, points: &[f64]) -> Result<Grid> {
    Grid::new(points.to_vec()).map_err(|e| CliError::config(field, e))
}

pub fn check(field: &str, ok: bool, reason: impl std::fmt::Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::config(field, reason))
    }
}

pub fn core_param(field: &str, r: osdrl_core::Result<()>) -> Result<()> {
    r.map_err(|e| CliError::config(field, e))
}

pub fn to_u64(steps: u64, field: &str) -> Result<usize> {
    usize::try_from(steps).map_err(|_| CliError::config(field, "too large"))
}
