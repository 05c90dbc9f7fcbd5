//! Class runtime templates and requirement matching.
//!
//! A template's `match` is a conjunction of conditions on a class's effective
//! QoS and constraints, written as strings:
//!
//! ```yaml
//! name: persistent-throughput
//! priority: 10
//! match: ["persistent == true", "throughput >= 50"]
//! config: {persistenceMode: WRITE_BEHIND, batchSize: 100, flushIntervalMs: 50}
//! ```
//!
//! A condition on a field the class leaves unset never holds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::class::{ConstraintSpec, QosSpec, ResolvedClass};
use crate::store::PersistenceMode;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("cannot parse condition {0:?}")]
    BadCondition(String),
    #[error("unknown requirement field {0}")]
    UnknownField(String),
    #[error("{field} cannot be compared with {value}")]
    TypeMismatch { field: String, value: String },
    #[error("priority {priority} already used by template {existing}")]
    DuplicatePriority { priority: i64, existing: String },
    #[error("template {0}: {1}")]
    BadConfig(String, String),
    #[error("catalog has no catch-all template")]
    NoDefault,
    #[error("cannot read catalog: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Throughput,
    Availability,
    LatencyMs,
    Persistent,
    Budget,
    Region,
}

impl Field {
    fn parse(s: &str) -> Result<Field, TemplateError> {
        Ok(match s {
            "throughput" => Field::Throughput,
            "availability" => Field::Availability,
            "latencyMs" | "latency_ms" | "latency" => Field::LatencyMs,
            "persistent" => Field::Persistent,
            "budget" => Field::Budget,
            "region" => Field::Region,
            other => return Err(TemplateError::UnknownField(other.to_string())),
        })
    }

    fn name(&self) -> &'static str {
        match self {
            Field::Throughput => "throughput",
            Field::Availability => "availability",
            Field::LatencyMs => "latencyMs",
            Field::Persistent => "persistent",
            Field::Budget => "budget",
            Field::Region => "region",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Eq,
    Ge,
    Le,
}

impl Op {
    fn symbol(&self) -> &'static str {
        match self {
            Op::Eq => "==",
            Op::Ge => ">=",
            Op::Le => "<=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Bool(b) => write!(f, "{b}"),
            Operand::Number(n) => write!(f, "{n}"),
            Operand::Text(s) => write!(f, "{s}"),
        }
    }
}

/// One `field op value` comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub field: Field,
    pub op: Op,
    pub value: Operand,
}

impl FromStr for Condition {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TemplateError::BadCondition(s.to_string());
        let (pos, op, width) = [("==", Op::Eq), (">=", Op::Ge), ("<=", Op::Le), ("≥", Op::Ge), ("≤", Op::Le)]
            .iter()
            .find_map(|(sym, op)| s.find(sym).map(|p| (p, *op, sym.len())))
            .ok_or_else(bad)?;
        let field = Field::parse(s[..pos].trim())?;
        let raw = s[pos + width..].trim();
        if raw.is_empty() {
            return Err(bad());
        }
        let mismatch = || TemplateError::TypeMismatch {
            field: field.name().to_string(),
            value: raw.to_string(),
        };
        let value = match field {
            Field::Persistent => match (op, raw) {
                (Op::Eq, "true") => Operand::Bool(true),
                (Op::Eq, "false") => Operand::Bool(false),
                _ => return Err(mismatch()),
            },
            Field::Region => {
                if op != Op::Eq {
                    return Err(mismatch());
                }
                Operand::Text(raw.trim_matches('"').to_string())
            }
            _ => Operand::Number(raw.parse().map_err(|_| mismatch())?),
        };
        Ok(Condition { field, op, value })
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.field.name(), self.op.symbol(), self.value)
    }
}

impl Serialize for Condition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Condition {
    pub fn holds(&self, qos: &QosSpec, constraint: &ConstraintSpec) -> bool {
        let num = |v: Option<f64>| match (v, &self.value) {
            (Some(x), Operand::Number(t)) => match self.op {
                Op::Eq => x == *t,
                Op::Ge => x >= *t,
                Op::Le => x <= *t,
            },
            _ => false,
        };
        match self.field {
            Field::Throughput => num(qos.throughput.map(|t| t.get() as f64)),
            Field::Availability => num(qos.availability),
            Field::LatencyMs => num(qos.latency_ms.map(|t| t.get() as f64)),
            Field::Budget => num(constraint.budget),
            Field::Persistent => matches!(
                (constraint.persistent, &self.value),
                (Some(p), Operand::Bool(want)) if p == *want
            ),
            Field::Region => matches!(
                (&constraint.region, &self.value),
                (Some(r), Operand::Text(want)) if r == want
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct TemplateConfig {
    pub persistence_mode: PersistenceMode,
    pub initial_replicas: u32,
    pub max_replicas: u32,
    pub batch_size: usize,
    pub flush_interval_ms: u64,
    pub per_replica_capacity_rps: f64,
    /// Invocations one replica may have in flight.
    pub concurrency_per_replica: u32,
    pub idle_timeout_ms: u64,
    /// How long an invocation may wait for a free slot before it is shed.
    pub queue_timeout_ms: u64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig {
            persistence_mode: PersistenceMode::WriteThrough,
            initial_replicas: 1,
            max_replicas: 4,
            batch_size: 100,
            flush_interval_ms: 50,
            per_replica_capacity_rps: 50.0,
            concurrency_per_replica: 8,
            idle_timeout_ms: 30_000,
            queue_timeout_ms: 1_000,
        }
    }
}

impl TemplateConfig {
    fn check(&self, name: &str) -> Result<(), TemplateError> {
        let bad = |m: &str| Err(TemplateError::BadConfig(name.to_string(), m.to_string()));
        if self.max_replicas == 0 {
            return bad("maxReplicas must be positive");
        }
        if self.initial_replicas > self.max_replicas {
            return bad("initialReplicas exceeds maxReplicas");
        }
        if !(self.per_replica_capacity_rps > 0.0) {
            return bad("perReplicaCapacityRps must be positive");
        }
        if self.concurrency_per_replica == 0 || self.batch_size == 0 {
            return bad("concurrencyPerReplica and batchSize must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TemplateSpec {
    pub name: String,
    #[serde(default, rename = "match")]
    pub conditions: Vec<Condition>,
    #[serde(default)]
    pub priority: i64,
    #[serde(default)]
    pub config: TemplateConfig,
}

impl TemplateSpec {
    pub fn new(name: impl Into<String>, priority: i64, conditions: &[&str], config: TemplateConfig) -> Self {
        TemplateSpec {
            name: name.into(),
            conditions: conditions.iter().map(|c| c.parse().expect("valid condition")).collect(),
            priority,
            config,
        }
    }

    /// One template from YAML or JSON.
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        serde_yaml::from_str(text).map_err(|e| TemplateError::Format(e.to_string()))
    }

    pub fn matches(&self, qos: &QosSpec, constraint: &ConstraintSpec) -> bool {
        self.conditions.iter().all(|c| c.holds(qos, constraint))
    }

    pub fn is_catch_all(&self) -> bool {
        self.conditions.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemplateCatalog {
    templates: Vec<TemplateSpec>,
}

impl TemplateCatalog {
    /// The built-in catalog: `default`, `ephemeral-fast` and `persistent-throughput`.
    pub fn builtin() -> Self {
        let mut c = TemplateCatalog::default();
        c.register(TemplateSpec::new("default", 0, &[], TemplateConfig::default()))
            .expect("builtin");
        c.register(TemplateSpec::new(
            "persistent-throughput",
            10,
            &["persistent == true", "throughput >= 50"],
            TemplateConfig {
                persistence_mode: PersistenceMode::WriteBehind,
                initial_replicas: 2,
                max_replicas: 8,
                ..TemplateConfig::default()
            },
        ))
        .expect("builtin");
        c.register(TemplateSpec::new(
            "ephemeral-fast",
            5,
            &["persistent == false"],
            TemplateConfig {
                persistence_mode: PersistenceMode::MemoryOnly,
                max_replicas: 8,
                ..TemplateConfig::default()
            },
        ))
        .expect("builtin");
        c
    }

    /// Parses a YAML or JSON list of templates. The result must contain a catch-all.
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let templates: Vec<TemplateSpec> =
            serde_yaml::from_str(text).map_err(|e| TemplateError::Format(e.to_string()))?;
        let mut c = TemplateCatalog::default();
        for t in templates {
            c.register(t)?;
        }
        if !c.templates.iter().any(TemplateSpec::is_catch_all) {
            return Err(TemplateError::NoDefault);
        }
        Ok(c)
    }

    /// Adds `t`, replacing any template of the same name. Priorities stay unique.
    pub fn register(&mut self, t: TemplateSpec) -> Result<(), TemplateError> {
        t.config.check(&t.name)?;
        if let Some(other) = self
            .templates
            .iter()
            .find(|o| o.priority == t.priority && o.name != t.name)
        {
            return Err(TemplateError::DuplicatePriority {
                priority: t.priority,
                existing: other.name.clone(),
            });
        }
        self.templates.retain(|o| o.name != t.name);
        self.templates.push(t);
        self.templates.sort_by(|a, b| b.priority.cmp(&a.priority));
        Ok(())
    }

    /// Templates by descending priority.
    pub fn templates(&self) -> &[TemplateSpec] {
        &self.templates
    }

    pub fn get(&self, name: &str) -> Option<&TemplateSpec> {
        self.templates.iter().find(|t| t.name == name)
    }

    pub fn select_for(&self, qos: &QosSpec, constraint: &ConstraintSpec) -> Option<&TemplateSpec> {
        self.templates.iter().find(|t| t.matches(qos, constraint))
    }

    /// Highest-priority template whose conditions the class satisfies.
    pub fn select(&self, rc: &ResolvedClass) -> Option<&TemplateSpec> {
        self.select_for(&rc.effective_qos, &rc.effective_constraint)
    }
}
