//! Image-to-endpoint registry.
//!
//! Two file formats are accepted. The plain one has one mapping per line:
//!
//! ```text
//! # image            endpoint
//! img/resize         http://127.0.0.1:9001
//! img/detect-object  local://detect-object
//! ```
//!
//! Files ending in `.json`, `.yaml` or `.yml` hold a single string map instead.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::class::FunctionDef;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("line {line}: expected `image endpoint`")]
    BadLine { line: usize },
    #[error("{0}")]
    Format(String),
    #[error("cannot read registry: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuntimeRegistry {
    images: BTreeMap<String, String>,
}

impl RuntimeRegistry {
    pub fn parse_lines(text: &str) -> Result<Self, RegistryError> {
        let mut images = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(image), Some(endpoint), None) => {
                    images.insert(image.to_string(), endpoint.to_string());
                }
                _ => return Err(RegistryError::BadLine { line: i + 1 }),
            }
        }
        Ok(RuntimeRegistry { images })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| RegistryError::Format(e.to_string())),
            Some("yaml" | "yml") => serde_yaml::from_str(&text).map_err(|e| RegistryError::Format(e.to_string())),
            _ => Self::parse_lines(&text),
        }
    }

    pub fn insert(&mut self, image: impl Into<String>, endpoint: impl Into<String>) {
        self.images.insert(image.into(), endpoint.into());
    }

    pub fn extend(&mut self, other: RuntimeRegistry) {
        self.images.extend(other.images);
    }

    pub fn get(&self, image: &str) -> Option<&str> {
        self.images.get(image).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// An explicit `endpoint` on the function wins over its image mapping.
    pub fn resolve(&self, f: &FunctionDef) -> Option<String> {
        f.endpoint
            .clone()
            .or_else(|| f.image.as_deref().and_then(|i| self.get(i)).map(str::to_string))
    }
}
