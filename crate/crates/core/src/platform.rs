//! The assembled platform: class catalog, state store, invocation engine and
//! runtime manager behind one handle.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::class::{
    compile_dataflow, parse_class_package, resolve_inheritance, validate_package, ClassDefinition, ClassPackage,
    DiagnosticKind, FunctionKind, PackageFormat, ParseError, ResolvedClass, ValidationReport,
};
use crate::dht::{Dht, DhtConfig};
use crate::invoke::{
    stubs, AsyncTaskStatus, EngineConfig, InvocationEngine, InvocationResponse, InvokeError, LocalRuntimes,
    Payload, RegistryError, RuntimeRegistry,
};
use crate::runtime::{ClassRuntime, ManagerConfig, RuntimeManager, TemplateCatalog, TemplateError, TemplateSpec};
use crate::store::{
    BlobMode, BlobQuery, BlobStore, ClassDirectory, DurableStore, FileStore, MemoryStore, ObjectId, ObjectRecord,
    PersistenceMode, PresignedUrl, Presigner, StateDocument, StateStore, StoreError,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct PlatformConfig {
    /// Object log, blobs and the deployed catalog live here. Without it all
    /// object state is in memory and blobs go to a scratch directory.
    pub data_dir: Option<PathBuf>,
    pub fsync: bool,
    /// HMAC key for presigned URLs. Generated and kept in `data_dir` if empty.
    pub secret: String,
    pub registry_path: Option<PathBuf>,
    pub templates_path: Option<PathBuf>,
    /// Overrides the persistence mode of catch-all templates.
    pub default_persistence: Option<PersistenceMode>,
    pub dht: DhtConfig,
    pub engine: EngineConfig,
    pub runtime: ManagerConfig,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        PlatformConfig {
            data_dir: None,
            fsync: true,
            secret: String::new(),
            registry_path: None,
            templates_path: None,
            default_persistence: None,
            dht: DhtConfig::default(),
            engine: EngineConfig::default(),
            runtime: ManagerConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("package rejected with {} error(s)", .0.errors.len())]
    Invalid(ValidationReport),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("unknown class {0}")]
    UnknownClass(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassDeployment {
    pub template_selected: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeployReport {
    pub classes_deployed: usize,
    pub classes: BTreeMap<String, ClassDeployment>,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassInfo {
    pub definition: ClassDefinition,
    pub resolved: ResolvedClass,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime: Option<ClassRuntime>,
}

/// Deployed definitions plus their flattened forms.
#[derive(Default)]
pub struct ClassCatalog {
    definitions: RwLock<BTreeMap<String, ClassDefinition>>,
    resolved: RwLock<HashMap<String, Arc<ResolvedClass>>>,
}

impl ClassDirectory for ClassCatalog {
    fn resolved_class(&self, name: &str) -> Option<Arc<ResolvedClass>> {
        self.resolved.read().get(name).cloned()
    }
}

impl ClassCatalog {
    pub fn definitions(&self) -> Vec<ClassDefinition> {
        self.definitions.read().values().cloned().collect()
    }

    pub fn definition(&self, name: &str) -> Option<ClassDefinition> {
        self.definitions.read().get(name).cloned()
    }
}

const CATALOG_FILE: &str = "classes.json";
const SECRET_FILE: &str = "secret";

/// Registry entries that make the sample classes runnable without any
/// external runtime.
pub fn sample_registry() -> RuntimeRegistry {
    let mut r = RuntimeRegistry::default();
    for (image, name) in [
        ("img/resize", "resize"),
        ("img/change-format", "change-format"),
        ("img/detect-object", "detect-object"),
        ("img/json-random", "json-random"),
        ("img/inc", "inc"),
        ("img/echo", "echo"),
        ("img/sleep-ms", "sleep-ms"),
    ] {
        r.insert(image, format!("local://{name}"));
    }
    r
}

pub struct Platform {
    config: PlatformConfig,
    classes: Arc<ClassCatalog>,
    dht: Arc<Dht>,
    store: Arc<StateStore>,
    engine: Arc<InvocationEngine>,
    runtimes: Arc<RuntimeManager>,
    deploy_lock: Mutex<()>,
}

impl Platform {
    /// Builds the platform and reloads any catalog saved in `data_dir`.
    /// Inside a tokio runtime the cache flushers and control loops start too.
    pub fn open(config: PlatformConfig) -> Result<Arc<Platform>, PlatformError> {
        let (durable, blob_root): (Arc<dyn DurableStore>, PathBuf) = match &config.data_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                (Arc::new(FileStore::open(dir.join("objects"), config.fsync)?), dir.join("blobs"))
            }
            None => (
                Arc::new(MemoryStore::new()),
                std::env::temp_dir().join(format!("oaas-blobs-{}", uuid::Uuid::new_v4())),
            ),
        };
        let secret = load_secret(&config)?;
        let dht = Arc::new(Dht::new(config.dht.clone(), durable));
        let classes = Arc::new(ClassCatalog::default());
        let store = Arc::new(StateStore::new(
            dht.clone(),
            BlobStore::new(blob_root)?,
            Presigner::new(secret),
            classes.clone(),
        ));

        let mut registry = sample_registry();
        if let Some(path) = &config.registry_path {
            registry.extend(RuntimeRegistry::load(path)?);
        }
        let local = LocalRuntimes::default();
        stubs::register_samples(&local);
        let engine = Arc::new(InvocationEngine::new(
            store.clone(),
            classes.clone(),
            registry,
            local,
            config.engine.clone(),
        ));

        let mut catalog = match &config.templates_path {
            Some(path) => TemplateCatalog::parse(&std::fs::read_to_string(path)?)?,
            None => TemplateCatalog::builtin(),
        };
        if let Some(mode) = config.default_persistence {
            let defaults: Vec<TemplateSpec> =
                catalog.templates().iter().filter(|t| t.is_catch_all()).cloned().collect();
            for mut t in defaults {
                t.config.persistence_mode = mode;
                catalog.register(t)?;
            }
        }
        let runtimes = Arc::new(RuntimeManager::new(catalog, dht.clone(), config.runtime.clone()));
        engine.set_admission(runtimes.clone());

        let platform = Arc::new(Platform {
            config,
            classes,
            dht,
            store,
            engine,
            runtimes,
            deploy_lock: Mutex::new(()),
        });
        if tokio::runtime::Handle::try_current().is_ok() {
            platform.dht.start_flushers();
            platform.runtimes.start();
        }
        if let Some(pkg) = platform.saved_catalog()? {
            let n = pkg.classes.len();
            platform.deploy(pkg)?;
            info!(classes = n, "restored class catalog");
        }
        Ok(platform)
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    pub fn classes(&self) -> &Arc<ClassCatalog> {
        &self.classes
    }

    pub fn dht(&self) -> &Arc<Dht> {
        &self.dht
    }

    pub fn store(&self) -> &Arc<StateStore> {
        &self.store
    }

    pub fn engine(&self) -> &Arc<InvocationEngine> {
        &self.engine
    }

    pub fn runtimes(&self) -> &Arc<RuntimeManager> {
        &self.runtimes
    }

    fn saved_catalog(&self) -> Result<Option<ClassPackage>, PlatformError> {
        let Some(dir) = &self.config.data_dir else {
            return Ok(None);
        };
        match std::fs::read_to_string(dir.join(CATALOG_FILE)) {
            Ok(text) => Ok(Some(parse_class_package(&text, PackageFormat::Json)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn save_catalog(&self, pkg: &ClassPackage) -> Result<(), PlatformError> {
        let Some(dir) = &self.config.data_dir else {
            return Ok(());
        };
        let tmp = dir.join(format!("{CATALOG_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_vec_pretty(pkg).expect("package serializes"))?;
        std::fs::rename(tmp, dir.join(CATALOG_FILE))?;
        Ok(())
    }

    pub fn deploy_text(&self, text: &str, format: PackageFormat) -> Result<DeployReport, PlatformError> {
        self.deploy(parse_class_package(text, format)?)
    }

    /// Validates `pkg` against the deployed classes, then resolves, provisions
    /// and records every class. Nothing changes if validation fails.
    pub fn deploy(&self, pkg: ClassPackage) -> Result<DeployReport, PlatformError> {
        let started = Instant::now();
        let _serial = self.deploy_lock.lock();
        let current: BTreeMap<String, ClassDefinition> = self.classes.definitions.read().clone();
        let mut report = validate_package(&pkg, &current);

        let mut merged = current.clone();
        for c in &pkg.classes {
            merged.insert(c.name.clone(), c.clone());
        }
        let registry = self.engine.registry();
        let mut resolved = HashMap::new();
        if report.is_ok() {
            for name in merged.keys() {
                let rc = match resolve_inheritance(name, &merged) {
                    Ok(rc) => rc,
                    Err(e) => {
                        report.error(name.clone(), DiagnosticKind::UnresolvedParent, e.to_string());
                        continue;
                    }
                };
                for (fname, f) in &rc.effective_functions {
                    let at = format!("{name}.functions.{fname}");
                    match f.kind {
                        FunctionKind::Macro => {
                            let plan = f
                                .dataflow
                                .as_ref()
                                .ok_or_else(|| "macro without dataflow".to_string())
                                .and_then(|df| compile_dataflow(df, &rc).map_err(|e| e.to_string()));
                            if let Err(e) = plan {
                                report.error(at, DiagnosticKind::InvalidDataflow, e);
                            }
                        }
                        FunctionKind::Task => {
                            if registry.resolve(f).is_none() && pkg.classes.iter().any(|c| &c.name == name) {
                                report.warn(
                                    at,
                                    DiagnosticKind::UnresolvedEndpoint,
                                    format!("no runtime registered for {fname} yet"),
                                );
                            }
                        }
                    }
                }
                resolved.insert(name.clone(), Arc::new(rc));
            }
        }
        if !report.is_ok() {
            return Err(PlatformError::Invalid(report));
        }

        let mut classes = BTreeMap::new();
        let mut selected = HashMap::new();
        for (name, rc) in &resolved {
            let t = self.runtimes.select_template(rc)?;
            selected.insert(name.clone(), t);
        }
        let package = ClassPackage {
            classes: merged.values().cloned().collect(),
        };
        self.save_catalog(&package)?;
        *self.classes.definitions.write() = merged;
        *self.classes.resolved.write() = resolved.clone();
        for (name, rc) in &resolved {
            let t = &selected[name];
            self.runtimes.provision(rc, t);
            if pkg.classes.iter().any(|c| &c.name == name) {
                let mut warnings: Vec<String> = report
                    .warnings
                    .iter()
                    .filter(|d| d.path.starts_with(name.as_str()) || d.message.starts_with(name.as_str()))
                    .map(|d| d.message.clone())
                    .collect();
                let c = &rc.effective_constraint;
                if c.budget.is_some() {
                    warnings.push(format!("{name}: budget constraint is recorded but not enforced"));
                }
                if c.region.is_some() {
                    warnings.push(format!("{name}: region constraint is recorded but not enforced"));
                }
                classes.insert(
                    name.clone(),
                    ClassDeployment {
                        template_selected: t.name.clone(),
                        warnings,
                    },
                );
            }
        }
        Ok(DeployReport {
            classes_deployed: pkg.classes.len(),
            classes,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    pub fn class_info(&self, name: &str) -> Option<ClassInfo> {
        Some(ClassInfo {
            definition: self.classes.definition(name)?,
            resolved: (*self.classes.resolved_class(name)?).clone(),
            runtime: self.runtimes.runtime_status(name),
        })
    }

    /// Adds or replaces a template and re-selects templates for every class.
    pub fn register_template(&self, t: TemplateSpec) -> Result<Vec<ClassRuntime>, PlatformError> {
        let _serial = self.deploy_lock.lock();
        self.runtimes.register_template(t)?;
        let resolved: Vec<_> = self.classes.resolved.read().values().cloned().collect();
        for rc in resolved {
            self.runtimes.provision_class(&rc)?;
        }
        Ok(self.runtimes.runtimes())
    }

    pub fn create_object(&self, cls: &str, state: StateDocument) -> Result<ObjectRecord, StoreError> {
        self.store.create_object(cls, state)
    }

    pub fn get_object(&self, id: &ObjectId) -> Result<ObjectRecord, StoreError> {
        self.store.get_object(id)
    }

    pub async fn invoke(&self, id: &ObjectId, fn_name: &str, payload: Payload) -> Result<InvocationResponse, InvokeError> {
        self.engine.invoke(id, fn_name, payload).await
    }

    pub fn invoke_async(&self, id: ObjectId, fn_name: String, payload: Payload) -> String {
        self.engine.invoke_async(id, fn_name, payload)
    }

    pub fn task_status(&self, task_id: &str) -> Option<AsyncTaskStatus> {
        self.engine.task_status(task_id)
    }

    pub fn presign(&self, id: &ObjectId, key: &str, mode: BlobMode) -> Result<PresignedUrl, StoreError> {
        self.store.presign_blob(id, key, mode, self.config.engine.blob_url_ttl_secs)
    }

    pub fn read_blob(&self, id: &str, key: &str, q: &BlobQuery) -> Result<Vec<u8>, StoreError> {
        self.store.read_blob(id, key, q)
    }

    pub fn write_blob(&self, id: &str, key: &str, q: &BlobQuery, bytes: &[u8]) -> Result<(), StoreError> {
        self.store.write_blob(id, key, q, bytes)
    }

    /// Metrics as `name value` lines, with per-node and per-class breakdowns
    /// as labelled lines under the totals.
    pub fn metrics_text(&self) -> String {
        let m = self.dht.metrics();
        let e = self.engine.counters();
        let mut out = String::new();
        let mut line = |name: &str, v: u64| {
            let _ = writeln!(out, "{name} {v}");
        };
        line("cache_hits", m.cache_hits());
        line("cache_misses", m.cache_misses());
        line("store_write_calls", m.store_write_calls);
        line("dirty_entries", m.dirty_entries() as u64);
        line("remapped_keys", m.remapped_keys);
        line("invocations_total", e.invocations);
        line("invocation_failures", e.failures);
        line("commits", e.commits);
        line("conflict_retries", e.conflict_retries);
        line("read_only_invocations", e.read_only);
        for n in &m.nodes {
            for (name, v) in [
                ("cache_hits", n.cache_hits),
                ("cache_misses", n.cache_misses),
                ("store_write_calls", n.store_write_calls),
                ("dirty_entries", n.dirty_entries as u64),
                ("cached_entries", n.entries as u64),
            ] {
                let _ = writeln!(out, "{name}{{node=\"{}\"}} {v}", n.node);
            }
        }
        for rt in self.runtimes.runtimes() {
            let _ = writeln!(out, "class_replicas{{class=\"{}\"}} {}", rt.cls, rt.replicas);
            let _ = writeln!(out, "class_in_flight{{class=\"{}\"}} {}", rt.cls, rt.in_flight);
            let _ = writeln!(out, "class_cold_starts{{class=\"{}\"}} {}", rt.cls, rt.cold_starts);
        }
        out
    }

    /// Flushes every dirty cache entry to the durable store.
    pub fn shutdown(&self) -> Result<(), StoreError> {
        let r = self.dht.flush_all()?;
        if r.entries_flushed > 0 {
            info!(entries = r.entries_flushed, "flushed on shutdown");
        }
        Ok(())
    }
}

fn load_secret(config: &PlatformConfig) -> Result<String, std::io::Error> {
    if !config.secret.is_empty() {
        return Ok(config.secret.clone());
    }
    let fresh = || hex::encode(rand::random::<[u8; 32]>());
    let Some(dir) = &config.data_dir else {
        return Ok(fresh());
    };
    let path: &Path = &dir.join(SECRET_FILE);
    match std::fs::read_to_string(path) {
        Ok(s) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Ok(_) | Err(_) => {
            let s = fresh();
            std::fs::write(path, &s)?;
            warn!(path = %path.display(), "generated a new blob signing secret");
            Ok(s)
        }
    }
}

#[cfg(test)]
mod tests;
