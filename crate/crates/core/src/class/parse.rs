use serde::de::DeserializeOwned;
use thiserror::Error;

use super::types::{ClassPackage, FunctionKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PackageFormat {
    Yaml,
    Json,
}

impl PackageFormat {
    /// Guesses the format from a file name; anything that is not `.json` is YAML.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => PackageFormat::Json,
            _ => PackageFormat::Yaml,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty class package")]
    Empty,
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at {path}: {reason}")]
    Schema { path: String, reason: String },
}

impl ParseError {
    fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        ParseError::Schema {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub fn parse_class_package(text: &str, format: PackageFormat) -> Result<ClassPackage, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let pkg: ClassPackage = match format {
        PackageFormat::Yaml => {
            let tree: serde_yaml::Value = serde_yaml::from_str(text).map_err(|e| {
                let (line, column) = e
                    .location()
                    .map(|l| (l.line(), l.column()))
                    .unwrap_or((0, 0));
                ParseError::Syntax {
                    line,
                    column,
                    message: e.to_string(),
                }
            })?;
            from_tree(tree)?
        }
        PackageFormat::Json => {
            let tree: serde_json::Value =
                serde_json::from_str(text).map_err(|e| ParseError::Syntax {
                    line: e.line(),
                    column: e.column(),
                    message: e.to_string(),
                })?;
            from_tree(tree)?
        }
    };
    check_values(&pkg)?;
    Ok(pkg)
}

fn from_tree<'de, D, T>(tree: D) -> Result<T, ParseError>
where
    D: serde::Deserializer<'de>,
    D::Error: std::fmt::Display,
    T: DeserializeOwned,
{
    serde_path_to_error::deserialize(tree).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { String::new() } else { path };
        ParseError::schema(path, e.inner().to_string())
    })
}

pub fn to_yaml(pkg: &ClassPackage) -> String {
    serde_yaml::to_string(pkg).expect("class package serializes")
}

pub fn to_json(pkg: &ClassPackage) -> String {
    serde_json::to_string_pretty(pkg).expect("class package serializes")
}

/// Identifiers end up in URL paths and dataflow references.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

fn check_values(pkg: &ClassPackage) -> Result<(), ParseError> {
    for (ci, class) in pkg.classes.iter().enumerate() {
        let at = format!("classes[{ci}]");
        if !is_identifier(&class.name) {
            return Err(ParseError::schema(format!("{at}.name"), "invalid identifier"));
        }
        if let Some(parent) = &class.parent {
            if !is_identifier(parent) {
                return Err(ParseError::schema(format!("{at}.parent"), "invalid identifier"));
            }
        }
        if let Some(a) = class.qos.availability {
            if !(a > 0.0 && a <= 1.0) {
                return Err(ParseError::schema(
                    format!("{at}.qos.availability"),
                    "must be in (0, 1]",
                ));
            }
        }
        if let Some(b) = class.constraint.budget {
            if !(b >= 0.0) {
                return Err(ParseError::schema(
                    format!("{at}.constraint.budget"),
                    "must be >= 0",
                ));
            }
        }
        for (ki, key) in class.key_specs.iter().enumerate() {
            if !is_identifier(&key.name) {
                return Err(ParseError::schema(
                    format!("{at}.keySpecs[{ki}].name"),
                    "invalid identifier",
                ));
            }
        }
        for (fi, f) in class.functions.iter().enumerate() {
            let fat = format!("{at}.functions[{fi}]");
            if !is_identifier(&f.name) {
                return Err(ParseError::schema(format!("{fat}.name"), "invalid identifier"));
            }
            match f.kind {
                FunctionKind::Task => {
                    if f.dataflow.is_some() {
                        return Err(ParseError::schema(
                            format!("{fat}.dataflow"),
                            "only macro functions carry a dataflow",
                        ));
                    }
                    if f.image.is_some() && f.endpoint.is_some() {
                        return Err(ParseError::schema(
                            format!("{fat}.endpoint"),
                            "give either image or endpoint, not both",
                        ));
                    }
                }
                FunctionKind::Macro => {
                    if f.dataflow.is_none() {
                        return Err(ParseError::schema(
                            format!("{fat}.dataflow"),
                            "macro functions require a dataflow",
                        ));
                    }
                    if f.endpoint.is_some() || f.image.is_some() {
                        return Err(ParseError::schema(
                            format!("{fat}.endpoint"),
                            "macro functions have no endpoint or image",
                        ));
                    }
                }
            }
            if let Some(df) = &f.dataflow {
                for (si, step) in df.steps.iter().enumerate() {
                    if !is_identifier(&step.alias) {
                        return Err(ParseError::schema(
                            format!("{fat}.dataflow.steps[{si}].alias"),
                            "invalid identifier",
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}
