use std::collections::{BTreeMap, HashMap, HashSet};

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

use super::types::{ClassDefinition, ClassPackage, ConstraintSpec, FunctionDef, KeySpec, QosSpec};

/// Read access to class definitions by name.
pub trait ClassLookup {
    fn class(&self, name: &str) -> Option<&ClassDefinition>;
}

impl ClassLookup for BTreeMap<String, ClassDefinition> {
    fn class(&self, name: &str) -> Option<&ClassDefinition> {
        self.get(name)
    }
}

impl ClassLookup for HashMap<String, ClassDefinition> {
    fn class(&self, name: &str) -> Option<&ClassDefinition> {
        self.get(name)
    }
}

impl ClassLookup for ClassPackage {
    fn class(&self, name: &str) -> Option<&ClassDefinition> {
        self.classes.iter().find(|c| c.name == name)
    }
}

/// A package layered over an already-deployed catalog. Package entries shadow
/// catalog entries of the same name.
pub struct Overlay<'a, C: ?Sized> {
    pub top: &'a ClassPackage,
    pub base: &'a C,
}

impl<C: ClassLookup + ?Sized> ClassLookup for Overlay<'_, C> {
    fn class(&self, name: &str) -> Option<&ClassDefinition> {
        self.top.class(name).or_else(|| self.base.class(name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResolveError {
    #[error("unknown class {0}")]
    UnknownClass(String),
    #[error("inheritance cycle through {}", .0.join(" -> "))]
    InheritanceCycle(Vec<String>),
    #[error("class {class} has no function {function}")]
    UnknownFunction { function: String, class: String },
}

/// A class flattened over its ancestry.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ResolvedClass {
    pub name: String,
    /// Ancestor names, root first, excluding the class itself.
    pub ancestry: Vec<String>,
    pub effective_qos: QosSpec,
    pub effective_constraint: ConstraintSpec,
    pub effective_key_specs: IndexMap<String, KeySpec>,
    pub effective_functions: IndexMap<String, FunctionDef>,
    /// Which class in the ancestry (or the class itself) declared each effective function.
    pub function_origin: IndexMap<String, String>,
}

impl ResolvedClass {
    /// Polymorphic dispatch: the nearest definition of `function` along the
    /// ancestry, starting at this class.
    pub fn function_binding(&self, function: &str) -> Result<&FunctionDef, ResolveError> {
        self.effective_functions
            .get(function)
            .ok_or_else(|| ResolveError::UnknownFunction {
                function: function.to_string(),
                class: self.name.clone(),
            })
    }

    pub fn has_key(&self, key: &str) -> bool {
        self.effective_key_specs.contains_key(key)
    }

    pub fn is_a(&self, class: &str) -> bool {
        self.name == class || self.ancestry.iter().any(|a| a == class)
    }

    /// A parentless definition equivalent to this flattened view.
    pub fn materialize(&self) -> ClassDefinition {
        ClassDefinition {
            name: self.name.clone(),
            parent: None,
            qos: self.effective_qos.clone(),
            constraint: self.effective_constraint.clone(),
            key_specs: self.effective_key_specs.values().cloned().collect(),
            functions: self.effective_functions.values().cloned().collect(),
        }
    }
}

pub fn resolve_function_binding<'a>(
    rc: &'a ResolvedClass,
    function: &str,
) -> Result<&'a FunctionDef, ResolveError> {
    rc.function_binding(function)
}

/// The chain `[name, parent, grandparent, ...]`, leaf first.
pub fn ancestor_chain<'a, C: ClassLookup + ?Sized>(
    name: &str,
    catalog: &'a C,
) -> Result<Vec<&'a ClassDefinition>, ResolveError> {
    let mut chain = Vec::new();
    let mut seen = HashSet::new();
    let mut cursor = Some(name.to_string());
    while let Some(current) = cursor {
        let def = catalog
            .class(&current)
            .ok_or_else(|| ResolveError::UnknownClass(current.clone()))?;
        if !seen.insert(def.name.as_str()) {
            let start = chain
                .iter()
                .position(|c: &&ClassDefinition| c.name == def.name)
                .unwrap_or(0);
            let mut cycle: Vec<String> = chain[start..].iter().map(|c| c.name.clone()).collect();
            cycle.push(def.name.clone());
            return Err(ResolveError::InheritanceCycle(cycle));
        }
        chain.push(def);
        cursor = def.parent.clone();
    }
    Ok(chain)
}

pub fn resolve_inheritance<C: ClassLookup + ?Sized>(
    name: &str,
    catalog: &C,
) -> Result<ResolvedClass, ResolveError> {
    let chain = ancestor_chain(name, catalog)?;
    let mut qos = QosSpec::default();
    let mut constraint = ConstraintSpec::default();
    let mut keys = IndexMap::new();
    let mut functions = IndexMap::new();
    let mut origin = IndexMap::new();
    for def in chain.iter().rev() {
        qos = qos.overlay(&def.qos);
        constraint = constraint.overlay(&def.constraint);
        for k in &def.key_specs {
            keys.insert(k.name.clone(), k.clone());
        }
        for f in &def.functions {
            functions.insert(f.name.clone(), f.clone());
            origin.insert(f.name.clone(), def.name.clone());
        }
    }
    let ancestry = chain[1..].iter().rev().map(|c| c.name.clone()).collect();
    Ok(ResolvedClass {
        name: chain[0].name.clone(),
        ancestry,
        effective_qos: qos,
        effective_constraint: constraint,
        effective_key_specs: keys,
        effective_functions: functions,
        function_origin: origin,
    })
}
