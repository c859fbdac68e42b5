//! Server configuration: a TOML file with `TENET_*` environment overrides.

use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::Deserialize;

pub const ENV_PREFIX: &str = "TENET_";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0} is required")]
    Missing(&'static str),
    #[error("{key}: {why}")]
    Invalid { key: &'static str, why: String },
}

/// The key set as it appears in the file; every field optional so that
/// environment variables can fill the gaps.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    listen_port: Option<u16>,
    data_dir: Option<PathBuf>,
    master_key: Option<String>,
    signing_key: Option<String>,
    operator_key: Option<String>,
    mock_idp_personas: Option<PathBuf>,
}

#[derive(Clone)]
pub struct ServerConfig {
    /// 0 picks an ephemeral port.
    pub listen_port: u16,
    /// None keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub master_key: [u8; 32],
    pub signing_key: [u8; 32],
    pub operator_key: String,
    /// JSON persona script; None uses the built-in personas.
    pub mock_idp_personas: Option<PathBuf>,
}

impl std::fmt::Debug for ServerConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServerConfig")
            .field("listen_port", &self.listen_port)
            .field("data_dir", &self.data_dir)
            .field("mock_idp_personas", &self.mock_idp_personas)
            .finish_non_exhaustive()
    }
}

fn key32(key: &'static str, b64: &str) -> Result<[u8; 32], ConfigError> {
    let bytes = STANDARD
        .decode(b64.trim())
        .map_err(|e| ConfigError::Invalid { key, why: format!("not base64: {e}") })?;
    bytes
        .try_into()
        .map_err(|b: Vec<u8>| ConfigError::Invalid { key, why: format!("expected 32 bytes, got {}", b.len()) })
}

impl ServerConfig {
    /// Reads `path` (if given) and applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<ServerConfig, ConfigError> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })?),
            None => None,
        };
        ServerConfig::from_sources(text.as_deref(), |k| std::env::var(k).ok())
    }

    pub fn from_sources(
        file: Option<&str>,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<ServerConfig, ConfigError> {
        let mut raw: RawConfig = match file {
            Some(text) => toml::from_str(text)?,
            None => RawConfig::default(),
        };
        let var = |name: &str| env(&format!("{ENV_PREFIX}{}", name.to_ascii_uppercase()));
        if let Some(v) = var("listen_port") {
            raw.listen_port = Some(v.parse().map_err(|e| ConfigError::Invalid {
                key: "listen_port",
                why: format!("{e}"),
            })?);
        }
        if let Some(v) = var("data_dir") {
            raw.data_dir = Some(v.into());
        }
        if let Some(v) = var("master_key") {
            raw.master_key = Some(v);
        }
        if let Some(v) = var("signing_key") {
            raw.signing_key = Some(v);
        }
        if let Some(v) = var("operator_key") {
            raw.operator_key = Some(v);
        }
        if let Some(v) = var("mock_idp_personas") {
            raw.mock_idp_personas = Some(v.into());
        }

        let master_key = key32("master_key", &raw.master_key.ok_or(ConfigError::Missing("master_key"))?)?;
        let signing_key = key32("signing_key", &raw.signing_key.ok_or(ConfigError::Missing("signing_key"))?)?;
        let operator_key = raw.operator_key.ok_or(ConfigError::Missing("operator_key"))?;
        if operator_key.len() < 8 {
            return Err(ConfigError::Invalid { key: "operator_key", why: "must be at least 8 characters".into() });
        }
        Ok(ServerConfig {
            listen_port: raw.listen_port.unwrap_or(DEFAULT_PORT),
            data_dir: raw.data_dir,
            master_key,
            signing_key,
            operator_key,
            mock_idp_personas: raw.mock_idp_personas,
        })
    }

    /// In-memory, random keys, ephemeral port. For tests and demos.
    pub fn ephemeral(operator_key: &str) -> ServerConfig {
        ServerConfig {
            listen_port: 0,
            data_dir: None,
            master_key: rand::random(),
            signing_key: rand::random(),
            operator_key: operator_key.to_string(),
            mock_idp_personas: None,
        }
    }
}
