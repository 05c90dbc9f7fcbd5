use std::num::NonZeroU32;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// A deployable bundle of class definitions, as read from a YAML or JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassPackage {
    pub classes: Vec<ClassDefinition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct ClassDefinition {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "QosSpec::is_empty")]
    pub qos: QosSpec,
    #[serde(default, skip_serializing_if = "ConstraintSpec::is_empty")]
    pub constraint: ConstraintSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub key_specs: Vec<KeySpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub functions: Vec<FunctionDef>,
}

impl ClassDefinition {
    pub fn new(name: impl Into<String>) -> Self {
        ClassDefinition {
            name: name.into(),
            parent: None,
            qos: QosSpec::default(),
            constraint: ConstraintSpec::default(),
            key_specs: Vec::new(),
            functions: Vec::new(),
        }
    }

    pub fn function(&self, name: &str) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| f.name == name)
    }
}

/// Declared quality-of-service targets. Absent fields are unconstrained.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct QosSpec {
    /// Requests per second.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<NonZeroU32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub availability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<NonZeroU32>,
}

impl QosSpec {
    pub fn is_empty(&self) -> bool {
        self.throughput.is_none() && self.availability.is_none() && self.latency_ms.is_none()
    }

    /// Field-wise overlay: values present in `child` win.
    pub fn overlay(&self, child: &QosSpec) -> QosSpec {
        QosSpec {
            throughput: child.throughput.or(self.throughput),
            availability: child.availability.or(self.availability),
            latency_ms: child.latency_ms.or(self.latency_ms),
        }
    }
}

/// Deployment constraints. `persistent` is kept tri-state so that template
/// predicates can tell "declared false" apart from "not declared".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct ConstraintSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persistent: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
}

impl ConstraintSpec {
    pub fn is_empty(&self) -> bool {
        self.persistent.is_none() && self.budget.is_none() && self.region.is_none()
    }

    pub fn is_persistent(&self) -> bool {
        self.persistent.unwrap_or(false)
    }

    pub fn overlay(&self, child: &ConstraintSpec) -> ConstraintSpec {
        ConstraintSpec {
            persistent: child.persistent.or(self.persistent),
            budget: child.budget.or(self.budget),
            region: child.region.clone().or_else(|| self.region.clone()),
        }
    }
}

/// A named slot for an unstructured blob attached to each object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct KeySpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media_type: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionKind {
    #[default]
    #[serde(alias = "TASK")]
    Task,
    #[serde(alias = "MACRO")]
    Macro,
}

impl FunctionKind {
    fn is_task(&self) -> bool {
        *self == FunctionKind::Task
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct FunctionDef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "FunctionKind::is_task")]
    pub kind: FunctionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataflow: Option<DataflowSpec>,
}

impl FunctionDef {
    pub fn task(name: impl Into<String>, endpoint: impl Into<String>) -> Self {
        FunctionDef {
            name: name.into(),
            image: None,
            endpoint: Some(endpoint.into()),
            kind: FunctionKind::Task,
            dataflow: None,
        }
    }

    pub fn macro_fn(name: impl Into<String>, dataflow: DataflowSpec) -> Self {
        FunctionDef {
            name: name.into(),
            image: None,
            endpoint: None,
            kind: FunctionKind::Macro,
            dataflow: Some(dataflow),
        }
    }
}

/// Declarative data-dependency graph of function calls.
///
/// Object references: `"@"` is the invoked object, `"$alias"` (optionally
/// followed by `.field` segments) is the output of a prior step. Any other
/// string target is taken as a literal object id. Inside `args`, string
/// values starting with `$` are references; `$$` escapes a literal `$`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataflowSpec {
    pub steps: Vec<DataflowStep>,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataflowStep {
    pub alias: String,
    #[serde(rename = "use")]
    pub function: String,
    #[serde(default = "invoked_target")]
    pub target: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub args: Value,
}

fn invoked_target() -> String {
    "@".to_string()
}

impl DataflowStep {
    pub fn new(alias: impl Into<String>, function: impl Into<String>) -> Self {
        DataflowStep {
            alias: alias.into(),
            function: function.into(),
            target: invoked_target(),
            args: Value::Null,
        }
    }

    pub fn with_target(mut self, target: impl Into<String>) -> Self {
        self.target = target.into();
        self
    }

    pub fn with_args(mut self, args: Value) -> Self {
        self.args = args;
        self
    }
}
