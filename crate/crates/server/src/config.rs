//! `vegaplus.toml`: sections `[cost]`, `[cache]`, `[network]`, `[server]`.
//! The file path comes from `--config`, else `VEGAPLUS_CONFIG`, else
//! `./vegaplus.toml` when present.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use vegaplus_core::cache::InteractionPredictor;
use vegaplus_core::partition::{CostParams, NetworkProfile};

pub const CONFIG_ENV: &str = "VEGAPLUS_CONFIG";

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub cost: CostParams,
    pub cache: CacheConfig,
    pub network: NetworkConfig,
    pub server: ServerConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub budget_bytes: u64,
    /// Decay per interaction step.
    pub alpha: f64,
    /// Slider neighbors predicted on each side.
    pub neighbors: usize,
    pub top_k: usize,
    /// Run prefetch jobs in the background after each request.
    pub prefetch: bool,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            budget_bytes: 256 << 20,
            alpha: 0.5,
            neighbors: 2,
            top_k: 8,
            prefetch: true,
        }
    }
}

impl CacheConfig {
    pub fn predictor(&self) -> InteractionPredictor {
        InteractionPredictor::new(self.alpha, self.neighbors, self.top_k)
    }
}

/// Simulated link between middleware and DBMS. No bandwidth means
/// unlimited.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub latency_ms: f64,
    pub bandwidth_mbps: Option<f64>,
}

impl NetworkConfig {
    pub fn profile(&self) -> Result<NetworkProfile, String> {
        network_profile(self.latency_ms, self.bandwidth_mbps)
    }
}

pub fn network_profile(latency_ms: f64, bandwidth_mbps: Option<f64>) -> Result<NetworkProfile, String> {
    if !(latency_ms >= 0.0 && latency_ms.is_finite()) {
        return Err(format!("latency must be a non-negative number, got {latency_ms}"));
    }
    match bandwidth_mbps {
        None => Ok(NetworkProfile {
            latency_ms,
            bandwidth: f64::INFINITY,
        }),
        Some(b) if b > 0.0 => Ok(NetworkProfile::from_mbps(latency_ms, b)),
        Some(b) => Err(format!("bandwidth must be positive, got {b}")),
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub port: u16,
    pub db: String,
    pub session_ttl_secs: u64,
    pub cors_origins: Vec<String>,
    pub max_upload_bytes: u64,
    /// Directory that spec file urls are resolved against.
    pub data_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            port: 8080,
            db: "embedded://".into(),
            session_ttl_secs: 3600,
            cors_origins: vec!["http://localhost:5173".into()],
            max_upload_bytes: 2 << 30,
            data_dir: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn from_file(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Config::from_toml(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Loads from `explicit`, else the env var, else `./vegaplus.toml` if
    /// present, else defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Config, ConfigError> {
        if let Some(p) = explicit {
            return Config::from_file(p);
        }
        if let Some(p) = std::env::var_os(CONFIG_ENV) {
            return Config::from_file(Path::new(&p));
        }
        let local = Path::new("vegaplus.toml");
        if local.exists() {
            return Config::from_file(local);
        }
        Ok(Config::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_are_optional_and_partial() {
        let c = Config::from_toml("[cache]\nbudget_bytes = 10\n[network]\nlatency_ms = 50\n").unwrap();
        assert_eq!(c.cache.budget_bytes, 10);
        assert_eq!(c.cache.top_k, 8);
        assert_eq!(c.network.latency_ms, 50.0);
        assert_eq!(c.server.port, 8080);
        assert_eq!(c.cost.kappa, 3.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_toml("[cache]\nbudget = 1\n").is_err());
    }

    #[test]
    fn megabits_convert_to_bytes_per_ms() {
        let p = network_profile(50.0, Some(80.0)).unwrap();
        assert_eq!(p.bandwidth, 10_000.0);
        assert!(network_profile(-1.0, None).is_err());
    }
}
