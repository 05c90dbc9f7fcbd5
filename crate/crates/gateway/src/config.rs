use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use oaas_core::platform::PlatformConfig;
use oaas_core::store::PersistenceMode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct GatewayConfig {
    pub bind: SocketAddr,
    /// Base URL function runtimes use to reach the blob endpoints. Derived
    /// from `bind` when unset.
    pub public_url: Option<String>,
    pub platform: PlatformConfig,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            bind: ([127, 0, 0, 1], 8080).into(),
            public_url: None,
            platform: PlatformConfig::default(),
        }
    }
}

pub const ENV_PREFIX: &str = "OAAS_";

impl GatewayConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => GatewayConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    /// Applies `OAAS_*` overrides read through `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<()> {
        let get = |name: &str| var(&format!("{ENV_PREFIX}{name}")).filter(|v| !v.is_empty());
        if let Some(v) = get("BIND") {
            self.bind = v.parse().with_context(|| format!("OAAS_BIND={v}"))?;
        }
        if let Some(v) = get("PUBLIC_URL") {
            self.public_url = Some(v);
        }
        let p = &mut self.platform;
        if let Some(v) = get("DATA_DIR") {
            p.data_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = get("SECRET") {
            p.secret = v;
        }
        if let Some(v) = get("REGISTRY") {
            p.registry_path = Some(PathBuf::from(v));
        }
        if let Some(v) = get("TEMPLATES") {
            p.templates_path = Some(PathBuf::from(v));
        }
        if let Some(v) = get("PERSISTENCE") {
            let mode: PersistenceMode = serde_json::from_value(serde_json::Value::String(v.to_uppercase()))
                .with_context(|| format!("OAAS_PERSISTENCE={v}"))?;
            p.default_persistence = Some(mode);
        }
        if let Some(v) = get("FSYNC") {
            p.fsync = matches!(v.as_str(), "1" | "true" | "yes");
        }
        Ok(())
    }

    /// Platform settings with the engine's public URL filled in.
    pub fn platform_config(&self) -> PlatformConfig {
        let mut p = self.platform.clone();
        p.engine.public_url = self.public_url.clone().unwrap_or_else(|| format!("http://{}", self.bind));
        p
    }
}
