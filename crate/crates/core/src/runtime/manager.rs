use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Weak};
use std::time::{Duration, Instant};

use futures::future::BoxFuture;
use futures::FutureExt;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use tokio::sync::Notify;
use tracing::info;

use super::autoscale::{autoscale_step, MetricsWindow, ScalingDecision, WindowRecorder};
use super::template::{TemplateCatalog, TemplateConfig, TemplateError, TemplateSpec};
use crate::class::ResolvedClass;
use crate::dht::{Dht, PersistencePolicy};
use crate::invoke::{Admission, AdmissionPermit, InvokeError, PermitGuard};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RuntimeState {
    /// No replicas; the next invocation cold-starts one.
    Provisioning,
    Ready,
    /// Scaled down below the work still in flight.
    Scaling,
}

/// Snapshot of one class's runtime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassRuntime {
    pub cls: String,
    pub template_name: String,
    pub replicas: u32,
    pub state: RuntimeState,
    pub effective_config: TemplateConfig,
    pub in_flight: u32,
    pub cold_starts: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_cold_start_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_decision: Option<ScalingDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsWindow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct ManagerConfig {
    pub tick_ms: u64,
    pub window_ms: u64,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        ManagerConfig {
            tick_ms: 1_000,
            window_ms: 1_000,
        }
    }
}

/// A resizable counting gate. Shrinking never revokes slots already held.
struct Gate {
    slots: Mutex<(u32, u32)>,
    notify: Notify,
}

impl Gate {
    fn new(width: u32) -> Self {
        Gate {
            slots: Mutex::new((width, 0)),
            notify: Notify::new(),
        }
    }

    fn try_acquire(&self) -> bool {
        let mut s = self.slots.lock();
        if s.1 < s.0 {
            s.1 += 1;
            true
        } else {
            false
        }
    }

    async fn acquire(&self, timeout: Duration) -> bool {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let notified = self.notify.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            if self.try_acquire() {
                return true;
            }
            if tokio::time::timeout_at(deadline, notified).await.is_err() {
                return self.try_acquire();
            }
        }
    }

    fn release(&self) {
        self.slots.lock().1 -= 1;
        self.notify.notify_one();
    }

    fn set_width(&self, width: u32) {
        self.slots.lock().0 = width;
        self.notify.notify_waiters();
    }

    fn load(&self) -> (u32, u32) {
        *self.slots.lock()
    }
}

struct Control {
    replicas: u32,
    idle_since: Option<Instant>,
    cold_starts: u64,
    last_cold_start_ms: Option<f64>,
    last_decision: Option<ScalingDecision>,
    last_window: Option<MetricsWindow>,
}

/// The live runtime of one class: an admission gate sized by its replica
/// count, and the metrics window its control loop reads.
pub struct RuntimeInstance {
    cls: String,
    template: TemplateSpec,
    gate: Gate,
    window: Mutex<WindowRecorder>,
    ctl: Mutex<Control>,
    retired: AtomicBool,
}

impl RuntimeInstance {
    fn new(cls: &str, template: TemplateSpec, window: Duration) -> Self {
        let replicas = template.config.initial_replicas;
        RuntimeInstance {
            cls: cls.to_string(),
            gate: Gate::new(replicas * template.config.concurrency_per_replica),
            template,
            window: Mutex::new(WindowRecorder::new(window)),
            ctl: Mutex::new(Control {
                replicas,
                idle_since: None,
                cold_starts: 0,
                last_cold_start_ms: None,
                last_decision: None,
                last_window: None,
            }),
            retired: AtomicBool::new(false),
        }
    }

    pub fn config(&self) -> &TemplateConfig {
        &self.template.config
    }

    pub fn template(&self) -> &TemplateSpec {
        &self.template
    }

    pub fn snapshot(&self) -> ClassRuntime {
        let ctl = self.ctl.lock();
        let (_, in_flight) = self.gate.load();
        let width = ctl.replicas * self.config().concurrency_per_replica;
        let state = if ctl.replicas == 0 && in_flight == 0 {
            RuntimeState::Provisioning
        } else if in_flight > width {
            RuntimeState::Scaling
        } else {
            RuntimeState::Ready
        };
        ClassRuntime {
            cls: self.cls.clone(),
            template_name: self.template.name.clone(),
            replicas: ctl.replicas,
            state,
            effective_config: self.template.config.clone(),
            in_flight,
            cold_starts: ctl.cold_starts,
            last_cold_start_ms: ctl.last_cold_start_ms,
            last_decision: ctl.last_decision,
            metrics: ctl.last_window.clone(),
        }
    }

    pub fn record_arrival(&self, at: Instant) {
        self.window.lock().arrival(at);
    }

    fn set_replicas(ctl: &mut Control, gate: &Gate, replicas: u32, per_replica: u32) {
        ctl.replicas = replicas;
        gate.set_width(replicas * per_replica);
    }

    /// One control-loop tick: read the window ending at `now`, decide, apply.
    pub fn control_step(&self, now: Instant) -> ScalingDecision {
        let window = self.window.lock().observe(&self.cls, now);
        let mut ctl = self.ctl.lock();
        let idle_for = if window.observed_rps > 0.0 {
            ctl.idle_since = None;
            Duration::ZERO
        } else {
            now.saturating_duration_since(*ctl.idle_since.get_or_insert(now))
        };
        let decision = autoscale_step(self.config(), &window, idle_for);
        if decision.new_replicas != ctl.replicas {
            info!(cls = %self.cls, from = ctl.replicas, to = decision.new_replicas, reason = ?decision.reason, "scale");
        }
        Self::set_replicas(&mut ctl, &self.gate, decision.new_replicas, self.config().concurrency_per_replica);
        ctl.last_decision = Some(decision);
        ctl.last_window = Some(window);
        decision
    }

    /// Waits for a free slot, cold-starting a replica if scaled to zero.
    pub async fn admit(self: &Arc<Self>) -> Result<AdmissionPermit, InvokeError> {
        let arrived = Instant::now();
        self.record_arrival(arrived);
        let cold = {
            let mut ctl = self.ctl.lock();
            if ctl.replicas == 0 {
                ctl.cold_starts += 1;
                ctl.idle_since = None;
                Self::set_replicas(&mut ctl, &self.gate, 1, self.config().concurrency_per_replica);
                true
            } else {
                false
            }
        };
        let timeout = Duration::from_millis(self.config().queue_timeout_ms);
        if !self.gate.acquire(timeout).await {
            return Err(InvokeError::Saturated {
                cls: self.cls.clone(),
                retry_after_ms: self.config().queue_timeout_ms.max(1),
            });
        }
        if cold {
            self.ctl.lock().last_cold_start_ms = Some(arrived.elapsed().as_secs_f64() * 1e3);
        }
        Ok(AdmissionPermit::new(Box::new(Slot {
            runtime: self.clone(),
            started: Instant::now(),
        })))
    }
}

struct Slot {
    runtime: Arc<RuntimeInstance>,
    started: Instant,
}

impl PermitGuard for Slot {
    fn release(self: Box<Self>, ok: bool) {
        let now = Instant::now();
        self.runtime.gate.release();
        self.runtime
            .window
            .lock()
            .completion(now, now.duration_since(self.started).as_secs_f64() * 1e3, ok);
    }
}

/// Owns the template catalog and one runtime per deployed class.
pub struct RuntimeManager {
    catalog: RwLock<TemplateCatalog>,
    runtimes: RwLock<BTreeMap<String, Arc<RuntimeInstance>>>,
    dht: Arc<Dht>,
    config: ManagerConfig,
    handle: Mutex<Option<tokio::runtime::Handle>>,
}

impl RuntimeManager {
    pub fn new(catalog: TemplateCatalog, dht: Arc<Dht>, config: ManagerConfig) -> Self {
        RuntimeManager {
            catalog: RwLock::new(catalog),
            runtimes: RwLock::new(BTreeMap::new()),
            dht,
            config,
            handle: Mutex::new(None),
        }
    }

    pub fn catalog(&self) -> TemplateCatalog {
        self.catalog.read().clone()
    }

    pub fn register_template(&self, t: TemplateSpec) -> Result<(), TemplateError> {
        self.catalog.write().register(t)
    }

    pub fn select_template(&self, rc: &ResolvedClass) -> Result<TemplateSpec, TemplateError> {
        self.catalog.read().select(rc).cloned().ok_or(TemplateError::NoDefault)
    }

    /// Applies `t` to `rc`'s class: its persistence policy goes to the cache
    /// and a fresh runtime replaces any previous one. Re-provisioning with an
    /// identical template keeps the running instance.
    pub fn provision(&self, rc: &ResolvedClass, t: &TemplateSpec) -> ClassRuntime {
        let cls = rc.name.as_str();
        if let Some(cur) = self.instance(cls) {
            if cur.template == *t {
                return cur.snapshot();
            }
        }
        self.dht.set_policy(
            cls,
            PersistencePolicy {
                mode: t.config.persistence_mode,
                batch_size: t.config.batch_size,
                flush_interval_ms: t.config.flush_interval_ms,
            },
        );
        let inst = Arc::new(RuntimeInstance::new(
            cls,
            t.clone(),
            Duration::from_millis(self.config.window_ms.max(1)),
        ));
        if let Some(old) = self.runtimes.write().insert(cls.to_string(), inst.clone()) {
            old.retired.store(true, Ordering::Relaxed);
        }
        self.spawn_loop(&inst);
        info!(cls, template = %t.name, replicas = t.config.initial_replicas, "provisioned");
        inst.snapshot()
    }

    pub fn provision_class(&self, rc: &ResolvedClass) -> Result<ClassRuntime, TemplateError> {
        let t = self.select_template(rc)?;
        Ok(self.provision(rc, &t))
    }

    pub fn instance(&self, cls: &str) -> Option<Arc<RuntimeInstance>> {
        self.runtimes.read().get(cls).cloned()
    }

    pub fn runtime_status(&self, cls: &str) -> Option<ClassRuntime> {
        self.instance(cls).map(|i| i.snapshot())
    }

    pub fn runtimes(&self) -> Vec<ClassRuntime> {
        self.runtimes.read().values().map(|i| i.snapshot()).collect()
    }

    /// Starts the per-class control loops on the current tokio runtime.
    pub fn start(&self) {
        *self.handle.lock() = Some(tokio::runtime::Handle::current());
        let all: Vec<_> = self.runtimes.read().values().cloned().collect();
        for inst in &all {
            self.spawn_loop(inst);
        }
    }

    fn spawn_loop(&self, inst: &Arc<RuntimeInstance>) {
        let Some(handle) = self.handle.lock().clone() else {
            return;
        };
        let weak: Weak<RuntimeInstance> = Arc::downgrade(inst);
        let tick = Duration::from_millis(self.config.tick_ms.max(1));
        handle.spawn(async move {
            let mut interval = tokio::time::interval(tick);
            interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
            interval.tick().await;
            loop {
                interval.tick().await;
                let Some(inst) = weak.upgrade() else { return };
                if inst.retired.load(Ordering::Relaxed) {
                    return;
                }
                inst.control_step(Instant::now());
            }
        });
    }
}

impl Admission for RuntimeManager {
    fn admit<'a>(&'a self, cls: &'a str) -> BoxFuture<'a, Result<AdmissionPermit, InvokeError>> {
        let inst = self.instance(cls);
        async move {
            match inst {
                Some(i) => i.admit().await,
                None => Ok(AdmissionPermit::unlimited()),
            }
        }
        .boxed()
    }
}
