use std::path::Path;

use anyhow::Context;
use ctdiff_core::denoiser::DenoiserConfig;
use ctdiff_core::metrics::MetricsConfig;
use ctdiff_core::simulate::RecipeDistribution;
use ctdiff_core::trainer::TrainingConfig;
use serde::{Deserialize, Serialize};

/// Optional overrides read from `--config`. Flags win over file values.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub denoiser: Option<DenoiserConfig>,
    #[serde(default)]
    pub training: Option<TrainingConfig>,
    #[serde(default)]
    pub recipe: Option<RecipeDistribution>,
    #[serde(default)]
    pub metrics: Option<MetricsConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<FileConfig> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
