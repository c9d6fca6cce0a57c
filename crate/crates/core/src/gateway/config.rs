use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GatewayError, DEFAULT_CONTEXT_WINDOW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendKind {
    Remote {
        /// Append every exchange to this cassette.
        #[serde(default)]
        record_to: Option<PathBuf>,
    },
    Scripted {
        cassette: PathBuf,
    },
    OracleMock,
    NoisyOracleMock {
        flip_prob: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            backoff_base_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    #[serde(flatten)]
    pub kind: BackendKind,
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    #[serde(default = "default_model")]
    pub model: String,
    /// Name of the environment variable holding the API token.
    #[serde(default = "default_auth_env")]
    pub auth_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_window")]
    pub context_window: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_endpoint() -> String {
    "https://api.openai.com/v1".into()
}
fn default_model() -> String {
    "gpt-4".into()
}
fn default_auth_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_timeout() -> u64 {
    120
}
fn default_parallel() -> usize {
    4
}
fn default_window() -> usize {
    DEFAULT_CONTEXT_WINDOW
}

impl BackendConfig {
    pub fn new(kind: BackendKind) -> Self {
        BackendConfig {
            kind,
            endpoint: default_endpoint(),
            model: default_model(),
            auth_env: default_auth_env(),
            timeout_secs: default_timeout(),
            max_parallel: default_parallel(),
            context_window: default_window(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_parallel == 0 {
            return Err(GatewayError::Config("max_parallel must be >= 1".into()));
        }
        if let BackendKind::NoisyOracleMock { flip_prob, .. } = self.kind {
            if !(0.0..=1.0).contains(&flip_prob) {
                return Err(GatewayError::Config(format!(
                    "flip_prob {flip_prob} outside [0, 1]"
                )));
            }
        }
        if self.retry.max_attempts == 0 {
            return Err(GatewayError::Config("retry.max_attempts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, GatewayError> {
        #[derive(Deserialize)]
        struct Wrapped {
            backend: BackendConfig,
        }
        // accept both a bare table and a `[backend]` section
        let cfg = match toml::from_str::<Wrapped>(text) {
            Ok(w) => w.backend,
            Err(_) => toml::from_str::<BackendConfig>(text)
                .map_err(|e| GatewayError::Config(e.to_string()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolves a command-line backend argument: `oracle-mock`,
    /// `noisy-oracle-mock[:<flip_prob>[:<seed>]]`, `remote`,
    /// `scripted:<cassette>` or the path of a TOML config file.
    pub fn from_arg(arg: &str) -> Result<Self, GatewayError> {
        let mut parts = arg.splitn(3, ':');
        let head = parts.next().unwrap_or_default();
        let cfg = match head {
            "oracle-mock" | "oracle" => BackendConfig::new(BackendKind::OracleMock),
            "noisy-oracle-mock" | "noisy-oracle" => {
                let parse_err = |what: &str| GatewayError::Config(format!("bad {what} in {arg:?}"));
                let flip_prob = parts
                    .next()
                    .map(|s| s.parse().map_err(|_| parse_err("flip_prob")))
                    .transpose()?
                    .unwrap_or(0.15);
                let seed = parts
                    .next()
                    .map(|s| s.parse().map_err(|_| parse_err("seed")))
                    .transpose()?
                    .unwrap_or(7);
                BackendConfig::new(BackendKind::NoisyOracleMock { flip_prob, seed })
            }
            "remote" => BackendConfig::new(BackendKind::Remote { record_to: None }),
            "scripted" => {
                let rest: Vec<&str> = parts.collect();
                BackendConfig::new(BackendKind::Scripted {
                    cassette: PathBuf::from(rest.join(":")),
                })
            }
            _ => return Self::from_file(Path::new(arg)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            GatewayError::Config(format!("cannot read backend config {}: {e}", path.display()))
        })?;
        let mut cfg = Self::from_toml(&text)?;
        // relative cassette paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        match &mut cfg.kind {
            BackendKind::Scripted { cassette } if cassette.is_relative() => {
                *cassette = base.join(&*cassette)
            }
            BackendKind::Remote {
                record_to: Some(p),
            } if p.is_relative() => *p = base.join(&*p),
            _ => {}
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sectioned_toml() {
        let cfg = BackendConfig::from_toml(
            r#"
            [backend]
            kind = "noisy-oracle-mock"
            flip_prob = 0.15
            seed = 7
            max_parallel = 2
            "#,
        )
        .unwrap();
        assert_eq!(
            cfg.kind,
            BackendKind::NoisyOracleMock {
                flip_prob: 0.15,
                seed: 7
            }
        );
        assert_eq!(cfg.max_parallel, 2);
        assert_eq!(cfg.context_window, 8192);
    }

    #[test]
    fn parses_remote_toml() {
        let cfg = BackendConfig::from_toml(
            r#"
            kind = "remote"
            endpoint = "http://localhost:9999/v1"
            model = "gpt-4-0613"
            auth_env = "MY_KEY"
            [retry]
            max_attempts = 2
            backoff_base_ms = 1
            "#,
        )
        .unwrap();
        assert_eq!(cfg.kind, BackendKind::Remote { record_to: None });
        assert_eq!(cfg.retry.max_attempts, 2);
    }

    #[test]
    fn rejects_bad_flip_prob() {
        assert!(BackendConfig::from_arg("noisy-oracle-mock:1.5").is_err());
    }

    #[test]
    fn shorthand_arguments() {
        assert_eq!(
            BackendConfig::from_arg("noisy-oracle-mock:0.2:9").unwrap().kind,
            BackendKind::NoisyOracleMock {
                flip_prob: 0.2,
                seed: 9
            }
        );
        assert_eq!(
            BackendConfig::from_arg("scripted:a/b.jsonl").unwrap().kind,
            BackendKind::Scripted {
                cassette: "a/b.jsonl".into()
            }
        );
    }
}
