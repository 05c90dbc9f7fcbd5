use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::future::{join_all, BoxFuture};
use parking_lot::{Mutex, RwLock};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Semaphore;
use tracing::debug;

use super::error::InvokeError;
use super::registry::RuntimeRegistry;
use super::runtime::{HttpRuntime, LocalContext, LocalRuntimes, LOCAL_SCHEME};
use super::wire::{BlobUrls, InvocationTask, Payload, TaskResult, TaskStatus};
use crate::class::{bind_args, compile_dataflow, FunctionDef, FunctionKind, ResolvedClass, TargetRef};
use crate::store::{
    now_secs, BlobMode, ClassDirectory, ObjectId, ObjectRecord, PersistenceMode, StateDocument, StateStore,
    StoreError,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct EngineConfig {
    pub deadline_ms: u64,
    /// Offload + commit attempts before a conflicting invocation gives up.
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    /// Steps of one dataflow stage allowed in flight at once.
    pub dataflow_parallelism: usize,
    pub blob_url_ttl_secs: u64,
    /// Base of the presigned blob URLs handed to runtimes.
    pub public_url: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            deadline_ms: 30_000,
            max_attempts: 5,
            backoff_base_ms: 2,
            backoff_max_ms: 200,
            dataflow_parallelism: 16,
            blob_url_ttl_secs: 900,
            public_url: "http://127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Timings {
    pub queue_ms: f64,
    pub exec_ms: f64,
    pub commit_ms: f64,
}

impl Timings {
    fn add(&mut self, other: &Timings) {
        self.queue_ms += other.queue_ms;
        self.exec_ms += other.exec_ms;
        self.commit_ms += other.commit_ms;
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InvocationResponse {
    pub output: Value,
    pub object_version_after: u64,
    pub attempts: u32,
    pub timings: Timings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AsyncState {
    Pending,
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub code: String,
    pub message: String,
}

impl From<&InvokeError> for ErrorInfo {
    fn from(e: &InvokeError) -> Self {
        ErrorInfo {
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AsyncTaskStatus {
    pub task_id: String,
    pub status: AsyncState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<InvocationResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

/// Released once when an admitted invocation finishes.
pub trait PermitGuard: Send {
    fn release(self: Box<Self>, ok: bool);
}

pub struct AdmissionPermit(Option<Box<dyn PermitGuard>>);

impl std::fmt::Debug for AdmissionPermit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("AdmissionPermit").field(&self.0.is_some()).finish()
    }
}

impl AdmissionPermit {
    pub fn new(guard: Box<dyn PermitGuard>) -> Self {
        AdmissionPermit(Some(guard))
    }

    pub fn unlimited() -> Self {
        AdmissionPermit(None)
    }

    pub fn release(mut self, ok: bool) {
        if let Some(g) = self.0.take() {
            g.release(ok);
        }
    }
}

impl Drop for AdmissionPermit {
    fn drop(&mut self) {
        if let Some(g) = self.0.take() {
            g.release(false);
        }
    }
}

/// Gatekeeper consulted before a task function is offloaded.
pub trait Admission: Send + Sync {
    fn admit<'a>(&'a self, cls: &'a str) -> BoxFuture<'a, Result<AdmissionPermit, InvokeError>>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EngineCounters {
    pub invocations: u64,
    pub failures: u64,
    pub commits: u64,
    pub conflict_retries: u64,
    pub read_only: u64,
}

#[derive(Default)]
struct Counters {
    invocations: AtomicU64,
    failures: AtomicU64,
    commits: AtomicU64,
    conflict_retries: AtomicU64,
    read_only: AtomicU64,
}

const MAX_ASYNC_RECORDS: usize = 10_000;

/// Turns invocations into offloaded tasks and commits their results.
pub struct InvocationEngine {
    store: Arc<StateStore>,
    classes: Arc<dyn ClassDirectory>,
    registry: RwLock<RuntimeRegistry>,
    local: LocalRuntimes,
    http: HttpRuntime,
    admission: RwLock<Option<Arc<dyn Admission>>>,
    config: EngineConfig,
    tasks: Mutex<HashMap<String, AsyncTaskStatus>>,
    counters: Counters,
}

struct Prepared {
    record: ObjectRecord,
    rc: Arc<ResolvedClass>,
    function: FunctionDef,
}

impl InvocationEngine {
    pub fn new(
        store: Arc<StateStore>,
        classes: Arc<dyn ClassDirectory>,
        registry: RuntimeRegistry,
        local: LocalRuntimes,
        config: EngineConfig,
    ) -> Self {
        InvocationEngine {
            store,
            classes,
            registry: RwLock::new(registry),
            local,
            http: HttpRuntime::default(),
            admission: RwLock::new(None),
            config,
            tasks: Mutex::new(HashMap::new()),
            counters: Counters::default(),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<StateStore> {
        &self.store
    }

    pub fn local(&self) -> &LocalRuntimes {
        &self.local
    }

    pub fn registry(&self) -> RuntimeRegistry {
        self.registry.read().clone()
    }

    pub fn set_registry(&self, registry: RuntimeRegistry) {
        *self.registry.write() = registry;
    }

    pub fn set_admission(&self, admission: Arc<dyn Admission>) {
        *self.admission.write() = Some(admission);
    }

    pub fn counters(&self) -> EngineCounters {
        let c = &self.counters;
        EngineCounters {
            invocations: c.invocations.load(Ordering::Relaxed),
            failures: c.failures.load(Ordering::Relaxed),
            commits: c.commits.load(Ordering::Relaxed),
            conflict_retries: c.conflict_retries.load(Ordering::Relaxed),
            read_only: c.read_only.load(Ordering::Relaxed),
        }
    }

    fn prepare(&self, id: &ObjectId, fn_name: &str) -> Result<Prepared, InvokeError> {
        let record = self.store.get_object(id)?;
        let rc = self
            .classes
            .resolved_class(&record.cls)
            .ok_or_else(|| StoreError::UnknownClass(record.cls.clone()))?;
        let function = rc
            .function_binding(fn_name)
            .map_err(|_| InvokeError::UnknownFunction {
                cls: rc.name.clone(),
                function: fn_name.to_string(),
            })?
            .clone();
        Ok(Prepared { record, rc, function })
    }

    /// Bundles a copy of the object's state with the request. Every declared
    /// key gets a PUT url; keys with a stored blob also get a GET url.
    pub fn build_task(
        &self,
        record: &ObjectRecord,
        function: &FunctionDef,
        payload: Payload,
        rc: &ResolvedClass,
    ) -> InvocationTask {
        let expires = now_secs() + self.config.blob_url_ttl_secs;
        let signer = self.store.signer();
        let base = &self.config.public_url;
        let blobs: BTreeMap<String, BlobUrls> = rc
            .effective_key_specs
            .keys()
            .map(|key| {
                let get_url = self
                    .store
                    .blobs()
                    .exists(&record.id, key)
                    .then(|| signer.sign(&record.id, key, BlobMode::Get, expires).to_url(base));
                let put_url = Some(signer.sign(&record.id, key, BlobMode::Put, expires).to_url(base));
                (key.clone(), BlobUrls { get_url, put_url })
            })
            .collect();
        InvocationTask {
            task_id: uuid::Uuid::new_v4().to_string(),
            object_id: record.id.clone(),
            cls: record.cls.clone(),
            fn_name: function.name.clone(),
            state: record.state.clone(),
            payload,
            blobs,
            deadline_ms: self.config.deadline_ms,
        }
    }

    /// Sends `task` to `endpoint` and waits at most `task.deadline_ms`.
    pub async fn offload(&self, task: &InvocationTask, endpoint: &str) -> Result<TaskResult, InvokeError> {
        let deadline = Duration::from_millis(task.deadline_ms);
        let timeout = || InvokeError::RuntimeTimeout {
            endpoint: endpoint.to_string(),
            deadline_ms: task.deadline_ms,
        };
        let result = if let Some(name) = endpoint.strip_prefix(LOCAL_SCHEME) {
            let handler = self.local.get(name).ok_or_else(|| InvokeError::RuntimeUnreachable {
                endpoint: endpoint.to_string(),
                message: "no local runtime by that name".into(),
            })?;
            let ctx = LocalContext::new(Some(self.store.clone()));
            // An in-process handler may complete without ever yielding; this
            // stands in for the scheduling point a network hop would give.
            tokio::task::consume_budget().await;
            tokio::time::timeout(deadline, handler(task.clone(), ctx))
                .await
                .map_err(|_| timeout())??
        } else {
            tokio::time::timeout(deadline, self.http.offload(endpoint, task))
                .await
                .map_err(|_| timeout())??
        };
        if result.task_id != task.task_id {
            return Err(InvokeError::MalformedResult(format!(
                "result for task {} answered task {}",
                result.task_id, task.task_id
            )));
        }
        Ok(result)
    }

    pub async fn invoke(&self, id: &ObjectId, fn_name: &str, payload: Payload) -> Result<InvocationResponse, InvokeError> {
        self.counters.invocations.fetch_add(1, Ordering::Relaxed);
        let result = match self.prepare(id, fn_name) {
            Ok(p) if p.function.kind == FunctionKind::Macro => self.run_macro(p, payload).await,
            Ok(p) => self.run_task(p, payload).await,
            Err(e) => Err(e),
        };
        if result.is_err() {
            self.counters.failures.fetch_add(1, Ordering::Relaxed);
        }
        result
    }

    pub async fn execute_dataflow(
        &self,
        id: &ObjectId,
        fn_name: &str,
        payload: Payload,
    ) -> Result<InvocationResponse, InvokeError> {
        let p = self.prepare(id, fn_name)?;
        if p.function.kind != FunctionKind::Macro {
            return Err(InvokeError::BadTarget(format!("{fn_name} is not a dataflow function")));
        }
        self.run_macro(p, payload).await
    }

    /// Starts `invoke` in the background; poll with [`Self::task_status`].
    pub fn invoke_async(self: &Arc<Self>, id: ObjectId, fn_name: String, payload: Payload) -> String {
        let task_id = uuid::Uuid::new_v4().to_string();
        {
            let mut tasks = self.tasks.lock();
            if tasks.len() >= MAX_ASYNC_RECORDS {
                tasks.retain(|_, t| t.status == AsyncState::Pending);
            }
            tasks.insert(
                task_id.clone(),
                AsyncTaskStatus {
                    task_id: task_id.clone(),
                    status: AsyncState::Pending,
                    response: None,
                    error: None,
                },
            );
        }
        let engine = self.clone();
        let tid = task_id.clone();
        tokio::spawn(async move {
            let result = engine.invoke(&id, &fn_name, payload).await;
            let status = match result {
                Ok(r) => AsyncTaskStatus {
                    task_id: tid.clone(),
                    status: AsyncState::Ok,
                    response: Some(r),
                    error: None,
                },
                Err(e) => AsyncTaskStatus {
                    task_id: tid.clone(),
                    status: AsyncState::Error,
                    response: None,
                    error: Some((&e).into()),
                },
            };
            engine.tasks.lock().insert(tid, status);
        });
        task_id
    }

    pub fn task_status(&self, task_id: &str) -> Option<AsyncTaskStatus> {
        self.tasks.lock().get(task_id).cloned()
    }

    async fn run_task(&self, p: Prepared, payload: Payload) -> Result<InvocationResponse, InvokeError> {
        if p.function.kind == FunctionKind::Macro {
            return Err(crate::class::DataflowError::NestedMacro(p.function.name.clone()).into());
        }
        let endpoint = self
            .registry
            .read()
            .resolve(&p.function)
            .ok_or_else(|| InvokeError::UnresolvedEndpoint {
                function: p.function.name.clone(),
            })?;
        let queued = Instant::now();
        let admission = self.admission.read().clone();
        let permit = match admission {
            Some(a) => a.admit(&p.rc.name).await?,
            None => AdmissionPermit::unlimited(),
        };
        let queue_ms = ms(queued.elapsed());
        let result = self.attempt(p, &endpoint, payload).await;
        permit.release(result.is_ok());
        result.map(|mut r| {
            r.timings.queue_ms = queue_ms;
            r
        })
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let exp = self
            .config
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.config.backoff_max_ms);
        let jittered = exp as f64 * rand::thread_rng().gen_range(0.5..=1.0);
        Duration::from_secs_f64(jittered / 1e3)
    }

    /// Offload and commit, re-reading and re-executing on version conflicts.
    async fn attempt(&self, p: Prepared, endpoint: &str, payload: Payload) -> Result<InvocationResponse, InvokeError> {
        let Prepared { mut record, rc, function } = p;
        let mut timings = Timings::default();
        let max = self.config.max_attempts.max(1);
        for attempt in 1..=max {
            if attempt > 1 {
                record = self.store.get_object(&record.id)?;
            }
            let task = self.build_task(&record, &function, payload.clone(), &rc);
            let started = Instant::now();
            let result = self.offload(&task, endpoint).await?;
            timings.exec_ms += ms(started.elapsed());
            let (output, new_state, blobs_written) = check_result(&rc, result)?;

            if new_state == record.state && blobs_written.is_empty() {
                self.counters.read_only.fetch_add(1, Ordering::Relaxed);
                return Ok(InvocationResponse {
                    output,
                    object_version_after: record.version,
                    attempts: attempt,
                    timings,
                });
            }
            let started = Instant::now();
            let committed = self.commit(&record, new_state).await;
            timings.commit_ms += ms(started.elapsed());
            match committed {
                Ok(rec) => {
                    self.counters.commits.fetch_add(1, Ordering::Relaxed);
                    return Ok(InvocationResponse {
                        output,
                        object_version_after: rec.version,
                        attempts: attempt,
                        timings,
                    });
                }
                Err(StoreError::VersionConflict { current }) => {
                    debug!(id = %record.id, attempt, current, "commit conflict");
                    self.counters.conflict_retries.fetch_add(1, Ordering::Relaxed);
                    if attempt < max {
                        tokio::time::sleep(self.backoff(attempt)).await;
                    }
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(InvokeError::ConflictRetriesExhausted { attempts: max })
    }

    async fn commit(&self, record: &ObjectRecord, state: StateDocument) -> Result<ObjectRecord, StoreError> {
        let token = self.store.begin_transition(&record.id, record.version)?;
        if self.store.dht().policy(&record.cls).mode == PersistenceMode::WriteThrough {
            let store = self.store.clone();
            tokio::task::spawn_blocking(move || store.commit_transition(&token, state))
                .await
                .map_err(|e| StoreError::StoreUnavailable(e.to_string()))?
        } else {
            self.store.commit_transition(&token, state)
        }
    }

    async fn run_macro(&self, p: Prepared, payload: Payload) -> Result<InvocationResponse, InvokeError> {
        let spec = p
            .function
            .dataflow
            .as_ref()
            .ok_or_else(|| InvokeError::BadTarget(format!("{} has no dataflow", p.function.name)))?;
        let plan = compile_dataflow(spec, &p.rc)?;
        let deadline_ms = self.config.deadline_ms.saturating_mul(plan.stages.len() as u64);
        let invoked = p.record.id.clone();

        let run = async {
            let limit = Semaphore::new(self.config.dataflow_parallelism.max(1));
            let mut outputs: HashMap<String, Value> = HashMap::new();
            let mut attempts = 0;
            let mut timings = Timings::default();
            for stage in &plan.stages {
                let runs = stage.iter().map(|&i| {
                    let step = &plan.steps[i];
                    let outputs = &outputs;
                    let limit = &limit;
                    let payload = &payload;
                    let invoked = &invoked;
                    async move {
                        let _slot = limit.acquire().await.expect("semaphore never closed");
                        let target = match &step.target {
                            TargetRef::Invoked => invoked.clone(),
                            TargetRef::Literal(id) => ObjectId::new(id.clone()),
                            TargetRef::Step(r) => match outputs.get(&r.alias).map(|o| r.select(o)) {
                                Some(Value::String(id)) => ObjectId::new(id.clone()),
                                other => {
                                    return Err(InvokeError::BadTarget(format!(
                                        "step {} target resolved to {other:?}, not an object id",
                                        step.alias
                                    )))
                                }
                            },
                        };
                        let args = if step.args.is_null() {
                            payload.clone()
                        } else {
                            Payload::Json(bind_args(&step.args, outputs))
                        };
                        let prepared = self.prepare(&target, &step.function)?;
                        self.run_task(prepared, args).await
                    }
                });
                let results = join_all(runs).await;
                for (&i, res) in stage.iter().zip(results) {
                    let alias = plan.steps[i].alias.clone();
                    match res {
                        Ok(r) => {
                            attempts += r.attempts;
                            timings.add(&r.timings);
                            outputs.insert(alias, r.output);
                        }
                        Err(cause) => {
                            return Err(InvokeError::StepFailed {
                                alias,
                                cause: Box::new(cause),
                            })
                        }
                    }
                }
            }
            let output = outputs.remove(&plan.steps[plan.output].alias).unwrap_or(Value::Null);
            Ok((output, attempts, timings))
        };

        let (output, attempts, timings) = tokio::time::timeout(Duration::from_millis(deadline_ms), run)
            .await
            .map_err(|_| InvokeError::RuntimeTimeout {
                endpoint: format!("dataflow {}", p.function.name),
                deadline_ms,
            })??;
        Ok(InvocationResponse {
            output,
            object_version_after: self.store.get_object(&invoked)?.version,
            attempts: attempts.max(1),
            timings,
        })
    }
}

fn check_result(rc: &ResolvedClass, result: TaskResult) -> Result<(Value, StateDocument, Vec<String>), InvokeError> {
    match result.status {
        TaskStatus::Error => {
            let e = result.error.unwrap_or(super::wire::TaskError {
                code: "UNKNOWN".into(),
                message: "runtime reported an error without details".into(),
            });
            Err(InvokeError::FunctionError {
                code: e.code,
                message: e.message,
            })
        }
        TaskStatus::Ok => {
            let new_state = result
                .new_state
                .ok_or_else(|| InvokeError::MalformedResult("ok result without newState".into()))?;
            let written = result.blobs_written.unwrap_or_default();
            if let Some(k) = written.iter().find(|k| !rc.has_key(k)) {
                return Err(InvokeError::MalformedResult(format!("wrote undeclared blob key {k}")));
            }
            Ok((result.output, new_state, written))
        }
    }
}
