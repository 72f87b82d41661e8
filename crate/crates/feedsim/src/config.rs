//! Service configuration, read from the TOML file named by `FEEDSIM_CONFIG`.

use std::path::{Path, PathBuf};

use anyhow::Context;
use feedsim_core::params::ParamPatch;
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "FEEDSIM_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// Simulated seconds per wall second; 1 is real time.
    pub speedup: f64,
    /// Default parameter overrides applied before the scenario's own.
    pub params: ParamPatch,
    /// JSON-lines file that receives watchdog violation records.
    pub violation_log: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            speedup: 1.0,
            params: ParamPatch::default(),
            violation_log: None,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: ServiceConfig = toml::from_str(text).context("config does not parse")?;
        anyhow::ensure!(
            cfg.speedup > 0.0 && cfg.speedup.is_finite(),
            "speedup must be positive"
        );
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text)
    }

    /// The file named by `FEEDSIM_CONFIG`, or defaults when it is unset.
    pub fn from_env() -> anyhow::Result<Self> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) => Self::from_file(Path::new(&p)),
            None => Ok(Self::default()),
        }
    }
}
