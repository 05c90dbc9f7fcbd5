use std::collections::{BTreeSet, HashSet};

use serde::Serialize;

use super::resolve::{ancestor_chain, ClassLookup, Overlay, ResolveError};
use super::types::ClassPackage;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum DiagnosticKind {
    DuplicateClass,
    DuplicateFunction,
    DuplicateKey,
    UnresolvedParent,
    InheritanceCycle,
    QosNarrowed,
    UnresolvedEndpoint,
    InvalidDataflow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub path: String,
    pub kind: DiagnosticKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<Diagnostic>,
    pub warnings: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn error(&mut self, path: impl Into<String>, kind: DiagnosticKind, message: impl Into<String>) {
        self.errors.push(Diagnostic {
            path: path.into(),
            kind,
            message: message.into(),
        });
    }

    pub fn warn(&mut self, path: impl Into<String>, kind: DiagnosticKind, message: impl Into<String>) {
        self.warnings.push(Diagnostic {
            path: path.into(),
            kind,
            message: message.into(),
        });
    }
}

/// Checks package-level invariants against the package itself layered over
/// the deployed `catalog`. Never fails; problems land in the report.
pub fn validate_package<C: ClassLookup + ?Sized>(pkg: &ClassPackage, catalog: &C) -> ValidationReport {
    let mut report = ValidationReport::default();
    let view = Overlay { top: pkg, base: catalog };

    let mut names = HashSet::new();
    for (ci, class) in pkg.classes.iter().enumerate() {
        let at = format!("classes[{ci}]");
        if !names.insert(class.name.as_str()) {
            report.error(
                format!("{at}.name"),
                DiagnosticKind::DuplicateClass,
                format!("class {} defined more than once", class.name),
            );
        }
        let mut fns = HashSet::new();
        for (fi, f) in class.functions.iter().enumerate() {
            if !fns.insert(f.name.as_str()) {
                report.error(
                    format!("{at}.functions[{fi}].name"),
                    DiagnosticKind::DuplicateFunction,
                    format!("function {} defined more than once in {}", f.name, class.name),
                );
            }
        }
        let mut keys = HashSet::new();
        for (ki, k) in class.key_specs.iter().enumerate() {
            if !keys.insert(k.name.as_str()) {
                report.error(
                    format!("{at}.keySpecs[{ki}].name"),
                    DiagnosticKind::DuplicateKey,
                    format!("key {} defined more than once in {}", k.name, class.name),
                );
            }
        }
    }

    let mut cycles_seen: HashSet<BTreeSet<String>> = HashSet::new();
    for (ci, class) in pkg.classes.iter().enumerate() {
        let at = format!("classes[{ci}]");
        match ancestor_chain(&class.name, &view) {
            Ok(chain) => {
                if let Some(parent) = chain.get(1) {
                    check_narrowing(&mut report, &at, class, parent);
                }
            }
            Err(ResolveError::UnknownClass(missing)) => report.error(
                format!("{at}.parent"),
                DiagnosticKind::UnresolvedParent,
                format!("{} inherits from unknown class {missing}", class.name),
            ),
            Err(ResolveError::InheritanceCycle(members)) => {
                let key: BTreeSet<String> = members.iter().cloned().collect();
                if cycles_seen.insert(key.clone()) {
                    let names: Vec<_> = key.into_iter().collect();
                    report.error(
                        format!("{at}.parent"),
                        DiagnosticKind::InheritanceCycle,
                        format!("inheritance cycle among {{{}}}", names.join(",")),
                    );
                }
            }
            Err(other) => report.error(
                format!("{at}.parent"),
                DiagnosticKind::UnresolvedParent,
                other.to_string(),
            ),
        }
    }
    report
}

fn check_narrowing(
    report: &mut ValidationReport,
    at: &str,
    class: &super::types::ClassDefinition,
    parent: &super::types::ClassDefinition,
) {
    let (child, base) = (&class.qos, &parent.qos);
    if let (Some(c), Some(p)) = (child.throughput, base.throughput) {
        if c < p {
            report.warn(
                format!("{at}.qos.throughput"),
                DiagnosticKind::QosNarrowed,
                format!("{} lowers inherited throughput {p} to {c}", class.name),
            );
        }
    }
    if let (Some(c), Some(p)) = (child.availability, base.availability) {
        if c < p {
            report.warn(
                format!("{at}.qos.availability"),
                DiagnosticKind::QosNarrowed,
                format!("{} lowers inherited availability {p} to {c}", class.name),
            );
        }
    }
    if let (Some(c), Some(p)) = (child.latency_ms, base.latency_ms) {
        if c > p {
            report.warn(
                format!("{at}.qos.latencyMs"),
                DiagnosticKind::QosNarrowed,
                format!("{} relaxes inherited latency {p}ms to {c}ms", class.name),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::class::fixtures::listing_one;
    use crate::class::types::{ClassDefinition, FunctionDef};

    fn empty() -> BTreeMap<String, ClassDefinition> {
        BTreeMap::new()
    }

    #[test]
    fn listing_one_is_valid() {
        let report = validate_package(&listing_one(), &empty());
        assert!(report.is_ok(), "{report:?}");
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn two_class_cycle() {
        let mut a = ClassDefinition::new("A");
        a.parent = Some("B".into());
        let mut b = ClassDefinition::new("B");
        b.parent = Some("A".into());
        let report = validate_package(&ClassPackage { classes: vec![a, b] }, &empty());
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].kind, DiagnosticKind::InheritanceCycle);
        assert!(report.errors[0].message.contains("{A,B}"));
    }

    #[test]
    fn missing_parent() {
        let mut pkg = listing_one();
        pkg.classes.remove(0);
        let report = validate_package(&pkg, &empty());
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].kind, DiagnosticKind::UnresolvedParent);
        assert_eq!(report.errors[0].path, "classes[0].parent");

        let deployed: BTreeMap<_, _> = listing_one()
            .classes
            .into_iter()
            .map(|c| (c.name.clone(), c))
            .collect();
        assert!(validate_package(&pkg, &deployed).is_ok());
    }

    #[test]
    fn duplicates() {
        let mut a = ClassDefinition::new("A");
        a.functions.push(FunctionDef::task("f", "http://x"));
        a.functions.push(FunctionDef::task("f", "http://y"));
        let b = ClassDefinition::new("A");
        let report = validate_package(&ClassPackage { classes: vec![a, b] }, &empty());
        let kinds: Vec<_> = report.errors.iter().map(|d| d.kind.clone()).collect();
        assert!(kinds.contains(&DiagnosticKind::DuplicateClass));
        assert!(kinds.contains(&DiagnosticKind::DuplicateFunction));
    }

    #[test]
    fn narrowed_qos_is_a_warning() {
        let mut pkg = listing_one();
        pkg.classes[1].qos.throughput = std::num::NonZeroU32::new(10);
        let report = validate_package(&pkg, &empty());
        assert!(report.is_ok());
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(report.warnings[0].kind, DiagnosticKind::QosNarrowed);
    }
}
