//! Declarative run configuration read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, EnvKind};
use crate::error::{Error, Result};
use crate::pearl::trainer::TrainSetup;
use crate::pearl::MetaRunConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub environment: EnvKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

/// A complete run: `[run]`, `[meta]` (with `[meta.sac]` and
/// `[meta.sac.optimizer]`) and `[env.*]` sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(default)]
    pub meta: MetaRunConfig,
    #[serde(default)]
    pub env: EnvConfig,
}

impl RunConfig {
    pub fn new(environment: EnvKind) -> Self {
        RunConfig {
            run: RunSection {
                environment,
                seed: 0,
                out_dir: default_out(),
            },
            meta: MetaRunConfig::default(),
            env: EnvConfig::default(),
        }
    }

    /// Parses and validates. Syntax errors and unknown keys carry the line
    /// and column reported by the TOML parser.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("cannot read {}: {e}", path.display()))))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        self.env.build(self.run.environment).map(|_| ())
    }

    pub fn setup(&self) -> TrainSetup {
        TrainSetup {
            env: self.run.environment,
            env_config: self.env.clone(),
            meta: self.meta.clone(),
            seed: self.run.seed,
        }
    }
}
