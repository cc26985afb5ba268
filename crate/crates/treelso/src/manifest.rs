//! Run manifest written next to every optimization output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::formats::{read_file, write_file};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    /// Seconds since the Unix epoch; the only wall-clock value in any output.
    pub created_unix: u64,
    pub queries: usize,
    /// Iterations after which the autoencoder was fine-tuned.
    pub retrain_events: Vec<usize>,
    pub inputs: Inputs,
    pub outputs: Outputs,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub images: PathBuf,
    pub images_sha256: String,
    pub scores: PathBuf,
    pub scores_sha256: String,
    pub model: PathBuf,
    pub model_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub trajectory: String,
    pub queries: String,
    pub final_model: String,
    pub final_model_sha256: String,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| CliError::Usage(e.to_string()))?;
        write_file(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| CliError::parse(path, "not UTF-8"))?;
        toml::from_str(&text).map_err(|e| CliError::parse(path, e.to_string()))
    }
}
