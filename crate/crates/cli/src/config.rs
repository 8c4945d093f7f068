use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use das_core::model::SummarizerConfig;
use das_core::train::TrainConfig;

use crate::error::{CliError, CliResult};

/// `[model]` and `[train]` tables; absent keys keep their defaults.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: SummarizerConfig,
    pub train: TrainConfig,
}

pub fn read_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|source| CliError::ConfigFile {
        path: path.to_path_buf(),
        source,
    })
}
