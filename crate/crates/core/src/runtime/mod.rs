//! Class runtimes: template selection, provisioning, admission and autoscaling.
//!
//! A replica is a logical unit of concurrency. A class runtime with `r`
//! replicas admits `r * concurrencyPerReplica` invocations at once; the rest
//! wait up to `queueTimeoutMs` and are then shed.

mod autoscale;
mod manager;
mod template;

pub use autoscale::{autoscale_step, MetricsWindow, ScaleReason, ScalingDecision, WindowRecorder};
pub use manager::{ClassRuntime, ManagerConfig, RuntimeInstance, RuntimeManager, RuntimeState};
pub use template::{
    Condition, Field, Op, Operand, TemplateCatalog, TemplateConfig, TemplateError, TemplateSpec,
};
