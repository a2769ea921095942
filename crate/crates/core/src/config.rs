//! Configuration: a TOML file, then `SANDPIPER_*` environment overrides.
//! Command-line flags are applied last by the caller.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::ProviderConfig;
use crate::model::RunParams;

pub const DEFAULT_CONFIG_FILE: &str = "sandpiper.toml";
pub const DEFAULT_PRIVILEGED_HEADER: &str = "X-Sandpiper-Privileged";
/// A store path of this value keeps everything in memory.
pub const MEMORY_STORE: &str = ":memory:";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid value for {var}: {message}")]
    Env { var: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind_address: String,
    pub port: u16,
    /// Bearer token required on every request. Unset disables auth.
    pub api_token: Option<String>,
    /// Value of the privileged header that unlocks mask maps. Unset means
    /// mask maps are never served.
    pub privileged_token: Option<String>,
    pub privileged_header: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind_address: "127.0.0.1".into(),
            port: 8080,
            api_token: None,
            privileged_token: None,
            privileged_header: DEFAULT_PRIVILEGED_HEADER.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeidConfig {
    /// Surrogate seed. When unset a random seed is generated once per store
    /// and kept in the protected collection.
    pub seed: Option<String>,
    pub cue_phrases: Vec<String>,
    pub institutions: Vec<String>,
}

impl Default for DeidConfig {
    fn default() -> Self {
        Self {
            seed: None,
            cue_phrases: crate::deid::DEFAULT_CUE_PHRASES.iter().map(|s| s.to_string()).collect(),
            institutions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub store_path: String,
    pub server: ServerConfig,
    pub gateway: ProviderConfig,
    pub deid: DeidConfig,
    /// Defaults for new runs.
    pub run: RunParams,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            store_path: "sandpiper-data".into(),
            server: ServerConfig::default(),
            gateway: ProviderConfig::default(),
            deid: DeidConfig::default(),
            run: RunParams::default(),
        }
    }
}

fn parse_env<T: std::str::FromStr>(var: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.trim().parse().map_err(|e: T::Err| ConfigError::Env { var: var.into(), message: e.to_string() })
}

fn list(raw: &str) -> Vec<String> {
    raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect()
}

impl Config {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_owned(), message: e.to_string() })
    }

    /// Reads `path`, or `sandpiper.toml` in the working directory when it
    /// exists, or starts from defaults.
    pub fn load_file(path: Option<&Path>) -> Result<Self, ConfigError> {
        let default = Path::new(DEFAULT_CONFIG_FILE);
        let path = match path {
            Some(p) => p,
            None if default.exists() => default,
            None => return Ok(Self::default()),
        };
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
        Self::from_toml(&text, path)
    }

    /// Applies `SANDPIPER_*` overrides read through `env`.
    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let get = |name: &str| env(name).filter(|v| !v.is_empty());
        if let Some(v) = get("SANDPIPER_STORE_PATH") {
            self.store_path = v;
        }
        if let Some(v) = get("SANDPIPER_BIND_ADDRESS") {
            self.server.bind_address = v;
        }
        if let Some(v) = get("SANDPIPER_PORT") {
            self.server.port = parse_env("SANDPIPER_PORT", &v)?;
        }
        if let Some(v) = get("SANDPIPER_API_TOKEN") {
            self.server.api_token = Some(v);
        }
        if let Some(v) = get("SANDPIPER_PRIVILEGED_TOKEN") {
            self.server.privileged_token = Some(v);
        }
        if let Some(v) = get("SANDPIPER_GATEWAY_URL") {
            self.gateway.base_url = v;
        }
        if let Some(v) = get("SANDPIPER_GATEWAY_MODELS") {
            self.gateway.models = list(&v);
        }
        if let Some(v) = get("SANDPIPER_GATEWAY_KEY_ENV") {
            self.gateway.api_key_env = v;
        }
        if let Some(v) = get("SANDPIPER_GATEWAY_TIMEOUT_MS") {
            self.gateway.timeout_ms = parse_env("SANDPIPER_GATEWAY_TIMEOUT_MS", &v)?;
        }
        if let Some(v) = get("SANDPIPER_DEID_SEED") {
            self.deid.seed = Some(v);
        }
        Ok(())
    }

    /// File, then the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = Self::load_file(path)?;
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn in_memory() -> Self {
        Self { store_path: MEMORY_STORE.into(), ..Self::default() }
    }
}
