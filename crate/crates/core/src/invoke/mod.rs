//! Invocation: tasks are built from an object's state, offloaded to a
//! function runtime and committed back through a version-checked transition.
//!
//! Runtimes must tolerate re-execution. When a commit loses a version race the
//! engine re-reads the object and offloads a fresh task, so a function may run
//! more than once for one successful invocation.

mod engine;
mod error;
mod registry;
mod runtime;
pub mod stubs;
mod wire;

pub use engine::{
    Admission, AdmissionPermit, AsyncState, AsyncTaskStatus, EngineConfig, EngineCounters, ErrorInfo,
    InvocationEngine, InvocationResponse, PermitGuard, Timings,
};
pub use error::InvokeError;
pub use registry::{RegistryError, RuntimeRegistry};
pub use runtime::{HttpRuntime, LocalContext, LocalHandler, LocalRuntimes, LOCAL_SCHEME};
pub use wire::{BlobUrls, InvocationTask, Payload, PayloadEncoding, TaskError, TaskResult, TaskStatus};
