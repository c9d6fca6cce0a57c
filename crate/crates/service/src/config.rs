use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uslink_core::gateway::BackendConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Backend(#[from] uslink_core::gateway::GatewayError),
}

/// Service settings, read from the `[service]` table of a TOML file. The
/// same file may carry a `[backend]` table understood by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub data_dir: PathBuf,
    /// Backend shorthand (`oracle-mock`, `remote`, ...) or config path.
    /// Falls back to the file's own `[backend]` table.
    pub backend_config: Option<String>,
    /// Allowed browser origins; empty allows any.
    pub cors_origins: Vec<String>,
    pub templates_dir: Option<PathBuf>,
    #[serde(skip)]
    pub backend: Option<BackendConfig>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            data_dir: PathBuf::from("uslink-data"),
            backend_config: None,
            cors_origins: Vec::new(),
            templates_dir: None,
            backend: None,
        }
    }
}

pub const ENV_PORT: &str = "USLINK_PORT";
pub const ENV_DATA_DIR: &str = "USLINK_DATA_DIR";
pub const ENV_BACKEND_CONFIG: &str = "USLINK_BACKEND_CONFIG";

impl ServiceConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        #[derive(Deserialize)]
        struct File {
            #[serde(default)]
            service: ServiceConfig,
            backend: Option<toml::Value>,
        }
        let file: File = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut cfg = file.service;
        if cfg.data_dir.is_relative() {
            cfg.data_dir = base.join(&cfg.data_dir);
        }
        if let Some(p) = &mut cfg.templates_dir {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(arg) = &mut cfg.backend_config {
            let candidate = base.join(&*arg);
            if candidate.is_file() {
                *arg = candidate.display().to_string();
            }
        }
        if file.backend.is_some() {
            cfg.backend = Some(BackendConfig::from_toml(text)?);
        }
        Ok(cfg)
    }

    /// Reads `path` (when given) and applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
                Self::from_toml(&text, p.parent().unwrap_or(Path::new(".")))?
            }
            None => ServiceConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(port) = var(ENV_PORT) {
            self.port = port
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{ENV_PORT}={port:?} is not a port")))?;
        }
        if let Some(dir) = var(ENV_DATA_DIR) {
            self.data_dir = dir.into();
        }
        if let Some(backend) = var(ENV_BACKEND_CONFIG) {
            self.backend_config = Some(backend);
        }
        Ok(())
    }

    /// `backend_config` wins over an inline `[backend]` table; without
    /// either the exact oracle mock is used.
    pub fn resolve_backend(&self) -> Result<BackendConfig, ConfigError> {
        if let Some(arg) = &self.backend_config {
            return Ok(BackendConfig::from_arg(arg)?);
        }
        if let Some(cfg) = &self.backend {
            return Ok(cfg.clone());
        }
        log::warn!("no backend configured, answering with the oracle mock");
        Ok(BackendConfig::from_arg("oracle-mock")?)
    }
}
