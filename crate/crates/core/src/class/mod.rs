//! Class packages: parsing, validation, inheritance flattening and dataflow
//! compilation.
//!
//! A package is a list of [`ClassDefinition`]s. Classes may name a single
//! `parent`; [`resolve_inheritance`] flattens the chain into a
//! [`ResolvedClass`] where the nearest definition of each function, key and
//! QoS/constraint field wins.

mod dataflow;
mod parse;
mod resolve;
mod types;
mod validate;

pub use dataflow::{
    bind_args, compile_dataflow, DataflowError, DataflowPlan, PlannedStep, StepRef, TargetRef,
};
pub use parse::{is_identifier, parse_class_package, to_json, to_yaml, PackageFormat, ParseError};
pub use resolve::{
    ancestor_chain, resolve_function_binding, resolve_inheritance, ClassLookup, Overlay,
    ResolveError, ResolvedClass,
};
pub use types::{
    ClassDefinition, ClassPackage, ConstraintSpec, DataflowSpec, DataflowStep, FunctionDef,
    FunctionKind, KeySpec, QosSpec,
};
pub use validate::{validate_package, Diagnostic, DiagnosticKind, ValidationReport};
