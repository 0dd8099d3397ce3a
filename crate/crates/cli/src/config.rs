use std::fs;
use std::path::Path;

use flowbench::bench::ProfileConfig;
use flowbench::flowgen::SolverConfig;
use flowbench::operators::Architecture;
use flowbench::trainer::TrainConfig;
use serde::Deserialize;

use crate::CliError;

/// `--config` file: TOML with optional `[solver]`, `[train]`, `[model]` and `[profile]` tables.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub solver: Option<SolverConfig>,
    pub train: Option<TrainConfig>,
    /// Replaces the default architecture; tagged by `kind`.
    pub model: Option<Architecture>,
    pub profile: Option<ProfileConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}
