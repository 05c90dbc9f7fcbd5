use std::collections::HashMap;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use super::resolve::ResolvedClass;
use super::types::{DataflowSpec, FunctionKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DataflowError {
    #[error("dataflow has no steps")]
    Empty,
    #[error("alias {0} used by more than one step")]
    DuplicateAlias(String),
    #[error("reference to unknown step {0}")]
    UnknownStep(String),
    #[error("dependency cycle among {}", .0.join(","))]
    Cycle(Vec<String>),
    #[error("step {alias} uses unknown function {function}")]
    UnknownFunction { alias: String, function: String },
    #[error("step {0} uses a macro function; macros do not nest")]
    NestedMacro(String),
}

/// Reference to a prior step's output, optionally narrowed by a field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepRef {
    pub alias: String,
    pub path: Vec<String>,
}

impl StepRef {
    fn parse(expr: &str) -> Option<StepRef> {
        let body = expr.strip_prefix('$')?;
        if body.starts_with('$') {
            return None;
        }
        let mut parts = body.split('.');
        let alias = parts.next()?.to_string();
        Some(StepRef {
            alias,
            path: parts.map(str::to_string).collect(),
        })
    }

    /// Selects the referenced part of a step output; missing fields yield null.
    pub fn select<'a>(&self, output: &'a Value) -> &'a Value {
        let mut cur = output;
        for seg in &self.path {
            cur = match cur {
                Value::Object(m) => m.get(seg).unwrap_or(&Value::Null),
                Value::Array(a) => seg
                    .parse::<usize>()
                    .ok()
                    .and_then(|i| a.get(i))
                    .unwrap_or(&Value::Null),
                _ => &Value::Null,
            };
        }
        cur
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum TargetRef {
    /// The object the macro was invoked on (`@`).
    Invoked,
    Step(StepRef),
    Literal(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlannedStep {
    pub alias: String,
    pub function: String,
    pub target: TargetRef,
    pub args: Value,
    /// Indices of the steps this one reads from.
    pub deps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataflowPlan {
    pub steps: Vec<PlannedStep>,
    /// `(from, to)`: `to` consumes `from`'s output.
    pub edges: Vec<(usize, usize)>,
    /// Topological layers; steps in one layer are mutually independent.
    pub stages: Vec<Vec<usize>>,
    pub output: usize,
}

impl DataflowPlan {
    pub fn stage_aliases(&self) -> Vec<Vec<&str>> {
        self.stages
            .iter()
            .map(|s| s.iter().map(|&i| self.steps[i].alias.as_str()).collect())
            .collect()
    }

    pub fn index_of(&self, alias: &str) -> Option<usize> {
        self.steps.iter().position(|s| s.alias == alias)
    }
}

fn collect_refs(value: &Value, out: &mut Vec<String>) {
    match value {
        Value::String(s) => {
            if let Some(r) = StepRef::parse(s) {
                out.push(r.alias);
            }
        }
        Value::Array(items) => items.iter().for_each(|v| collect_refs(v, out)),
        Value::Object(m) => m.values().for_each(|v| collect_refs(v, out)),
        _ => {}
    }
}

/// Replaces `$alias[.path]` strings in `args` with the referenced outputs.
pub fn bind_args(args: &Value, outputs: &HashMap<String, Value>) -> Value {
    match args {
        Value::String(s) => {
            if let Some(r) = StepRef::parse(s) {
                outputs
                    .get(&r.alias)
                    .map(|o| r.select(o).clone())
                    .unwrap_or(Value::Null)
            } else if let Some(rest) = s.strip_prefix("$$") {
                Value::String(format!("${rest}"))
            } else {
                args.clone()
            }
        }
        Value::Array(items) => Value::Array(items.iter().map(|v| bind_args(v, outputs)).collect()),
        Value::Object(m) => Value::Object(
            m.iter()
                .map(|(k, v)| (k.clone(), bind_args(v, outputs)))
                .collect(),
        ),
        other => other.clone(),
    }
}

/// Builds the dependency graph of a dataflow and layers it by longest path
/// from the sources, so every step lands in the earliest stage its inputs allow.
pub fn compile_dataflow(spec: &DataflowSpec, rc: &ResolvedClass) -> Result<DataflowPlan, DataflowError> {
    if spec.steps.is_empty() {
        return Err(DataflowError::Empty);
    }
    let mut index = HashMap::new();
    for (i, step) in spec.steps.iter().enumerate() {
        if index.insert(step.alias.as_str(), i).is_some() {
            return Err(DataflowError::DuplicateAlias(step.alias.clone()));
        }
    }

    let mut steps = Vec::with_capacity(spec.steps.len());
    let mut edges = Vec::new();
    for (i, step) in spec.steps.iter().enumerate() {
        let target = if step.target == "@" {
            TargetRef::Invoked
        } else if let Some(r) = StepRef::parse(&step.target) {
            TargetRef::Step(r)
        } else {
            TargetRef::Literal(step.target.clone())
        };
        if target == TargetRef::Invoked {
            let f = rc
                .function_binding(&step.function)
                .map_err(|_| DataflowError::UnknownFunction {
                    alias: step.alias.clone(),
                    function: step.function.clone(),
                })?;
            if f.kind == FunctionKind::Macro {
                return Err(DataflowError::NestedMacro(step.alias.clone()));
            }
        }

        let mut refs = Vec::new();
        if let TargetRef::Step(r) = &target {
            refs.push(r.alias.clone());
        }
        collect_refs(&step.args, &mut refs);
        let mut deps = Vec::new();
        for alias in refs {
            let &j = index
                .get(alias.as_str())
                .ok_or_else(|| DataflowError::UnknownStep(alias.clone()))?;
            if !deps.contains(&j) {
                deps.push(j);
                edges.push((j, i));
            }
        }
        deps.sort_unstable();
        steps.push(PlannedStep {
            alias: step.alias.clone(),
            function: step.function.clone(),
            target,
            args: step.args.clone(),
            deps,
        });
    }

    let output = *index
        .get(spec.output.as_str())
        .ok_or_else(|| DataflowError::UnknownStep(spec.output.clone()))?;

    // Kahn's algorithm, assigning each step the stage after its latest input.
    let n = steps.len();
    let mut indegree: Vec<usize> = steps.iter().map(|s| s.deps.len()).collect();
    let mut dependents = vec![Vec::new(); n];
    for &(from, to) in &edges {
        dependents[from].push(to);
    }
    let mut level = vec![0usize; n];
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut placed = 0;
    while let Some(i) = ready.pop() {
        placed += 1;
        for &j in &dependents[i] {
            level[j] = level[j].max(level[i] + 1);
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.push(j);
            }
        }
    }
    if placed < n {
        let stuck = (0..n)
            .filter(|&i| indegree[i] > 0)
            .map(|i| steps[i].alias.clone())
            .collect();
        return Err(DataflowError::Cycle(stuck));
    }

    let depth = level.iter().copied().max().unwrap_or(0) + 1;
    let mut stages = vec![Vec::new(); depth];
    for (i, &l) in level.iter().enumerate() {
        stages[l].push(i);
    }
    Ok(DataflowPlan {
        steps,
        edges,
        stages,
        output,
    })
}
