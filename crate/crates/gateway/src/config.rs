//! Gateway configuration: a TOML file, then environment overrides.
//!
//! ```toml
//! bind = "127.0.0.1:8080"
//! mode = "oracle"          # or "llm"
//! token = "secret"         # optional static bearer token
//! autostart = "swap_n10"   # optional scenario started at launch
//! agents = 10              # optional size override for autostart
//! ```

use std::net::SocketAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use swarmfield_core::planner::llm::{self, LlmEndpointConfig};

pub const ENV_BIND: &str = "SWARMFIELD_BIND";
pub const ENV_MODE: &str = "SWARMFIELD_MODE";
pub const ENV_TOKEN: &str = "SWARMFIELD_TOKEN";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{var}={value:?} is not valid: {reason}")]
    Env { var: &'static str, value: String, reason: String },
    #[error(transparent)]
    Llm(#[from] llm::ConfigError),
}

/// Which planner free-text commands go to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Oracle,
    Llm,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(Mode::Oracle),
            "llm" => Ok(Mode::Llm),
            other => Err(format!("expected oracle or llm, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub bind: SocketAddr,
    pub mode: Mode,
    pub token: Option<String>,
    pub autostart: Option<String>,
    pub agents: Option<usize>,
    /// Model endpoint, required in llm mode. Comes from the environment only.
    #[serde(skip)]
    pub llm: Option<LlmEndpointConfig>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            mode: Mode::Oracle,
            token: None,
            autostart: None,
            agents: None,
            llm: None,
        }
    }
}

impl GatewayConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` (if any), applies environment overrides and, in llm
    /// mode, loads the model endpoint settings.
    pub fn load(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => Self::from_toml(&std::fs::read_to_string(p)?)?,
            None => Self::default(),
        };
        if let Some(v) = env(ENV_BIND) {
            config.bind = v.parse().map_err(|e: std::net::AddrParseError| ConfigError::Env {
                var: ENV_BIND,
                value: v.clone(),
                reason: e.to_string(),
            })?;
        }
        if let Some(v) = env(ENV_MODE) {
            config.mode = v.parse().map_err(|reason| ConfigError::Env { var: ENV_MODE, value: v.clone(), reason })?;
        }
        if let Some(v) = env(ENV_TOKEN) {
            config.token = Some(v).filter(|t| !t.is_empty());
        }
        config.resolve_llm(env)?;
        Ok(config)
    }

    /// Loads endpoint settings when in llm mode and none are set yet.
    pub fn resolve_llm(&mut self, env: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if self.mode == Mode::Llm && self.llm.is_none() {
            self.llm = Some(LlmEndpointConfig::from_lookup(env)?);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn env(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let map: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| map.get(k).cloned()
    }

    #[test]
    fn file_then_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gateway.toml");
        std::fs::write(&path, "bind = \"0.0.0.0:9000\"\nautostart = \"swap_n10\"\n").unwrap();

        let c = GatewayConfig::load(Some(&path), env(&[])).unwrap();
        assert_eq!(c.bind.port(), 9000);
        assert_eq!(c.autostart.as_deref(), Some("swap_n10"));

        let c = GatewayConfig::load(Some(&path), env(&[(ENV_BIND, "127.0.0.1:7000"), (ENV_TOKEN, "t")])).unwrap();
        assert_eq!(c.bind.port(), 7000);
        assert_eq!(c.token.as_deref(), Some("t"));
    }

    #[test]
    fn llm_mode_needs_endpoint() {
        assert!(matches!(GatewayConfig::load(None, env(&[(ENV_MODE, "llm")])), Err(ConfigError::Llm(_))));
        let c = GatewayConfig::load(
            None,
            env(&[
                (ENV_MODE, "llm"),
                (llm::ENV_ENDPOINT, "http://localhost:1/v1/chat/completions"),
                (llm::ENV_MODEL, "m"),
            ]),
        )
        .unwrap();
        assert_eq!(c.mode, Mode::Llm);
        assert_eq!(c.llm.unwrap().model, "m");
        assert!(matches!(GatewayConfig::load(None, env(&[(ENV_MODE, "gpt")])), Err(ConfigError::Env { .. })));
        assert!(GatewayConfig::from_toml("port = 1").is_err());
    }
}
