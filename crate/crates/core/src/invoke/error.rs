use thiserror::Error;

use crate::class::DataflowError;
use crate::store::StoreError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvokeError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("class {cls} has no function {function}")]
    UnknownFunction { cls: String, function: String },
    #[error("no runtime endpoint registered for function {function}")]
    UnresolvedEndpoint { function: String },
    #[error("runtime {endpoint} unreachable: {message}")]
    RuntimeUnreachable { endpoint: String, message: String },
    #[error("runtime {endpoint} missed its {deadline_ms} ms deadline")]
    RuntimeTimeout { endpoint: String, deadline_ms: u64 },
    #[error("malformed task result: {0}")]
    MalformedResult(String),
    #[error("function failed: {code}: {message}")]
    FunctionError { code: String, message: String },
    #[error("commit still conflicting after {attempts} attempts")]
    ConflictRetriesExhausted { attempts: u32 },
    #[error("step {alias} failed: {cause}")]
    StepFailed { alias: String, cause: Box<InvokeError> },
    #[error(transparent)]
    Dataflow(#[from] DataflowError),
    #[error("bad step target: {0}")]
    BadTarget(String),
    #[error("class runtime for {cls} is saturated")]
    Saturated { cls: String, retry_after_ms: u64 },
}

impl InvokeError {
    /// Stable, machine-readable error name.
    pub fn code(&self) -> &'static str {
        match self {
            InvokeError::Store(e) => match e {
                StoreError::UnknownClass(_) => "UnknownClass",
                StoreError::NotFound(_) => "NotFound",
                StoreError::AlreadyExists(_) => "AlreadyExists",
                StoreError::VersionConflict { .. } => "VersionConflict",
                StoreError::TokenReused => "TokenReused",
                StoreError::UnknownKey { .. } => "UnknownKey",
                StoreError::BlobNotFound { .. } => "BlobNotFound",
                StoreError::Forbidden(_) => "Forbidden",
                StoreError::StateTooLarge(_) => "StateTooLarge",
                StoreError::StoreUnavailable(_) | StoreError::Io(_) => "StoreUnavailable",
                StoreError::NotOwner { .. } => "NotOwner",
                StoreError::RingEmpty => "RingEmpty",
                StoreError::UnknownNode(_) => "UnknownNode",
            },
            InvokeError::UnknownFunction { .. } => "UnknownFunction",
            InvokeError::UnresolvedEndpoint { .. } => "UnresolvedEndpoint",
            InvokeError::RuntimeUnreachable { .. } => "RuntimeUnreachable",
            InvokeError::RuntimeTimeout { .. } => "RuntimeTimeout",
            InvokeError::MalformedResult(_) => "MalformedResult",
            InvokeError::FunctionError { .. } => "FunctionError",
            InvokeError::ConflictRetriesExhausted { .. } => "ConflictRetriesExhausted",
            InvokeError::StepFailed { .. } => "StepFailed",
            InvokeError::Dataflow(_) => "InvalidDataflow",
            InvokeError::BadTarget(_) => "BadTarget",
            InvokeError::Saturated { .. } => "Saturated",
        }
    }

    /// The innermost cause, looking through failed dataflow steps.
    pub fn root(&self) -> &InvokeError {
        match self {
            InvokeError::StepFailed { cause, .. } => cause.root(),
            other => other,
        }
    }
}
