//! Run configuration files.

use std::path::Path;

use anyhow::{bail, Context, Result};
use cfql_core::envs::REACHER_ID;
use cfql_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

/// A training run: the environment, how much offline data to draw from it,
/// and the trainer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    /// Offline episodes; the registry default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episodes: Option<usize>,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: REACHER_ID.into(),
            episodes: None,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(anyhow::Error::from)
        } else {
            toml::from_str(&text).map_err(anyhow::Error::from)
        };
        let config: RunConfig = parsed.with_context(|| format!("invalid config file {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let spec = cfql_core::envs::spec(&self.env)?;
        if spec.tabular {
            bail!("environment {} is tabular; training needs a continuous environment", self.env);
        }
        if self.episodes == Some(0) {
            bail!("episodes must be positive");
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn episodes(&self) -> Result<usize> {
        Ok(match self.episodes {
            Some(n) => n,
            None => cfql_core::envs::spec(&self.env)?.default_episodes,
        })
    }
}
