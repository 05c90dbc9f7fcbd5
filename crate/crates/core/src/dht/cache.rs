use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use tokio::sync::Notify;
use tracing::{debug, warn};

use super::ring::{rebalance, HashRing, DEFAULT_HASH_SEED, DEFAULT_VNODES};
use crate::store::{DurableStore, ObjectId, ObjectRecord, PersistenceMode, StateDocument, StoreError};

/// Per-class persistence settings pushed down by the runtime manager.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PersistencePolicy {
    pub mode: PersistenceMode,
    pub batch_size: usize,
    pub flush_interval_ms: u64,
}

impl Default for PersistencePolicy {
    fn default() -> Self {
        PersistencePolicy {
            mode: PersistenceMode::WriteThrough,
            batch_size: 100,
            flush_interval_ms: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct DhtConfig {
    pub nodes: Vec<String>,
    pub vnodes_per_node: u32,
    pub hash_seed: u64,
    /// Dirty entries per node that trigger an early flush.
    pub high_watermark: usize,
    /// Clean entries above this count are LRU-evicted.
    pub entry_cap: usize,
    pub default_policy: PersistencePolicy,
}

impl Default for DhtConfig {
    fn default() -> Self {
        DhtConfig {
            nodes: (1..=4).map(|i| format!("n{i}")).collect(),
            vnodes_per_node: DEFAULT_VNODES,
            hash_seed: DEFAULT_HASH_SEED,
            high_watermark: 1000,
            entry_cap: 100_000,
            default_policy: PersistencePolicy::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub record: ObjectRecord,
    pub dirty: bool,
    pub dirtied_at: Option<Instant>,
    /// Highest version this node has seen durably written.
    pub flushed_version: Option<u64>,
    mode: PersistenceMode,
    last_access: u64,
}

impl CacheEntry {
    fn evictable(&self) -> bool {
        !self.dirty && self.mode != PersistenceMode::MemoryOnly
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FlushReport {
    pub entries_flushed: usize,
    pub store_write_calls: u64,
    pub max_staleness_ms: u64,
}

impl FlushReport {
    fn absorb(&mut self, other: FlushReport) {
        self.entries_flushed += other.entries_flushed;
        self.store_write_calls += other.store_write_calls;
        self.max_staleness_ms = self.max_staleness_ms.max(other.max_staleness_ms);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct NodeMetrics {
    pub node: String,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub store_write_calls: u64,
    pub dirty_entries: usize,
    pub entries: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DhtMetrics {
    pub nodes: Vec<NodeMetrics>,
    pub remapped_keys: u64,
    /// Write calls seen by the durable store itself.
    pub store_write_calls: u64,
}

impl DhtMetrics {
    pub fn cache_hits(&self) -> u64 {
        self.nodes.iter().map(|n| n.cache_hits).sum()
    }

    pub fn cache_misses(&self) -> u64 {
        self.nodes.iter().map(|n| n.cache_misses).sum()
    }

    pub fn dirty_entries(&self) -> usize {
        self.nodes.iter().map(|n| n.dirty_entries).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RebalanceReport {
    pub migrated: BTreeMap<ObjectId, String>,
    pub flushed: FlushReport,
}

#[derive(Default)]
struct PartitionState {
    entries: HashMap<ObjectId, CacheEntry>,
    /// Evictable entries ordered by last access.
    lru: BTreeMap<u64, ObjectId>,
    tick: u64,
    dirty: usize,
}

impl PartitionState {
    fn next_tick(&mut self) -> u64 {
        self.tick += 1;
        self.tick
    }

    fn touch(&mut self, id: &ObjectId) {
        let tick = self.next_tick();
        if let Some(e) = self.entries.get_mut(id) {
            if e.evictable() {
                self.lru.remove(&e.last_access);
                self.lru.insert(tick, id.clone());
            }
            e.last_access = tick;
        }
    }

    fn upsert(&mut self, record: ObjectRecord, mode: PersistenceMode, dirty: bool, flushed: Option<u64>) {
        let tick = self.next_tick();
        let id = record.id.clone();
        let prev = self.entries.remove(&id);
        let mut dirtied_at = None;
        if let Some(p) = &prev {
            if p.evictable() {
                self.lru.remove(&p.last_access);
            }
            if p.dirty {
                self.dirty -= 1;
                dirtied_at = p.dirtied_at;
            }
        }
        let flushed_version = flushed.or(prev.as_ref().and_then(|p| p.flushed_version));
        let entry = CacheEntry {
            record,
            dirty,
            dirtied_at: if dirty { dirtied_at.or_else(|| Some(Instant::now())) } else { None },
            flushed_version,
            mode,
            last_access: tick,
        };
        if entry.dirty {
            self.dirty += 1;
        }
        if entry.evictable() {
            self.lru.insert(tick, id.clone());
        }
        self.entries.insert(id, entry);
    }

    fn mark_clean(&mut self, id: &ObjectId, version: u64) {
        let Some(e) = self.entries.get_mut(id) else {
            return;
        };
        e.flushed_version = Some(e.flushed_version.map_or(version, |f| f.max(version)));
        if e.dirty && e.record.version <= version {
            e.dirty = false;
            e.dirtied_at = None;
            self.dirty -= 1;
            if e.evictable() {
                self.lru.insert(e.last_access, id.clone());
            }
        }
    }

    fn remove(&mut self, id: &ObjectId) -> Option<CacheEntry> {
        let e = self.entries.remove(id)?;
        if e.evictable() {
            self.lru.remove(&e.last_access);
        }
        if e.dirty {
            self.dirty -= 1;
        }
        Some(e)
    }

    fn evict_over(&mut self, cap: usize) {
        while self.entries.len() > cap {
            let Some((_, id)) = self.lru.pop_first() else {
                break;
            };
            self.entries.remove(&id);
        }
    }
}

struct Partition {
    node: String,
    state: Mutex<PartitionState>,
    flush_lock: Mutex<()>,
    flush_signal: Notify,
    hits: AtomicU64,
    misses: AtomicU64,
    write_calls: AtomicU64,
}

impl Partition {
    fn new(node: String) -> Self {
        Partition {
            node,
            state: Mutex::new(PartitionState::default()),
            flush_lock: Mutex::new(()),
            flush_signal: Notify::new(),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            write_calls: AtomicU64::new(0),
        }
    }
}

struct Topology {
    ring: Arc<HashRing>,
    partitions: HashMap<String, Arc<Partition>>,
}

/// Partitioned in-memory object cache over a durable store.
///
/// Each logical node owns the objects the ring assigns to it. All record
/// mutations for a node go through that node's partition lock. Ring changes
/// take the topology write lock, which quiesces every partition.
pub struct Dht {
    config: DhtConfig,
    topology: RwLock<Topology>,
    store: Arc<dyn DurableStore>,
    policies: RwLock<HashMap<String, PersistencePolicy>>,
    remapped: AtomicU64,
    conflict_faults: Mutex<HashMap<ObjectId, u32>>,
    runtime: Mutex<Option<tokio::runtime::Handle>>,
    weak: Mutex<Option<Weak<Dht>>>,
}

impl Dht {
    pub fn new(config: DhtConfig, store: Arc<dyn DurableStore>) -> Self {
        let ring = HashRing::with_nodes(config.nodes.clone(), config.vnodes_per_node, config.hash_seed);
        let partitions = ring
            .nodes()
            .iter()
            .map(|n| (n.clone(), Arc::new(Partition::new(n.clone()))))
            .collect();
        Dht {
            config,
            topology: RwLock::new(Topology {
                ring: Arc::new(ring),
                partitions,
            }),
            store,
            policies: RwLock::new(HashMap::new()),
            remapped: AtomicU64::new(0),
            conflict_faults: Mutex::new(HashMap::new()),
            runtime: Mutex::new(None),
            weak: Mutex::new(None),
        }
    }

    pub fn config(&self) -> &DhtConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<dyn DurableStore> {
        &self.store
    }

    pub fn ring(&self) -> Arc<HashRing> {
        self.topology.read().ring.clone()
    }

    pub fn set_policy(&self, cls: &str, policy: PersistencePolicy) {
        self.policies.write().insert(cls.to_string(), policy);
    }

    pub fn policy(&self, cls: &str) -> PersistencePolicy {
        self.policies
            .read()
            .get(cls)
            .copied()
            .unwrap_or(self.config.default_policy)
    }

    pub fn owner_of(&self, id: &ObjectId) -> Result<String, StoreError> {
        self.topology.read().ring.owner_of(id.as_str()).map(str::to_string)
    }

    fn owned_partition(&self, topo: &Topology, node: &str, id: &ObjectId) -> Result<Arc<Partition>, StoreError> {
        let part = topo
            .partitions
            .get(node)
            .cloned()
            .ok_or_else(|| StoreError::UnknownNode(node.to_string()))?;
        if topo.ring.owner_of(id.as_str())? != node {
            return Err(StoreError::NotOwner {
                node: node.to_string(),
                id: id.clone(),
            });
        }
        Ok(part)
    }

    /// Loads `id` from the durable store into `st` if absent. Returns whether it is now cached.
    fn load(&self, part: &Partition, st: &mut PartitionState, id: &ObjectId) -> Result<bool, StoreError> {
        if st.entries.contains_key(id) {
            part.hits.fetch_add(1, Ordering::Relaxed);
            st.touch(id);
            return Ok(true);
        }
        part.misses.fetch_add(1, Ordering::Relaxed);
        match self.store.read(id)? {
            Some(record) => {
                let mode = self.policy(&record.cls).mode;
                let v = record.version;
                st.upsert(record, mode, false, Some(v));
                st.evict_over(self.config.entry_cap);
                Ok(true)
            }
            None => Ok(false),
        }
    }

    pub fn cache_get(&self, node: &str, id: &ObjectId) -> Result<ObjectRecord, StoreError> {
        let topo = self.topology.read();
        let part = self.owned_partition(&topo, node, id)?;
        let mut st = part.state.lock();
        if !self.load(&part, &mut st, id)? {
            return Err(StoreError::NotFound(id.clone()));
        }
        Ok(st.entries[id].record.clone())
    }

    /// Stores `record` if it is newer than the cached copy. Write-through
    /// classes persist before returning; write-behind classes are marked dirty.
    pub fn cache_put(&self, node: &str, record: ObjectRecord) -> Result<bool, StoreError> {
        let topo = self.topology.read();
        let part = self.owned_partition(&topo, node, &record.id)?;
        let mut st = part.state.lock();
        self.load(&part, &mut st, &record.id)?;
        if let Some(cur) = st.entries.get(&record.id) {
            if record.version <= cur.record.version {
                return Ok(false);
            }
        }
        self.apply_write(&part, &mut st, record)?;
        Ok(true)
    }

    fn apply_write(&self, part: &Partition, st: &mut PartitionState, record: ObjectRecord) -> Result<(), StoreError> {
        let policy = self.policy(&record.cls);
        match policy.mode {
            PersistenceMode::WriteThrough => {
                part.write_calls.fetch_add(1, Ordering::Relaxed);
                self.store.persist_batch(&part.node, std::slice::from_ref(&record))?;
                let v = record.version;
                st.upsert(record, policy.mode, false, Some(v));
            }
            PersistenceMode::WriteBehind => {
                st.upsert(record, policy.mode, true, None);
                if st.dirty >= self.config.high_watermark {
                    part.flush_signal.notify_one();
                }
            }
            PersistenceMode::MemoryOnly => st.upsert(record, policy.mode, false, None),
        }
        st.evict_over(self.config.entry_cap);
        Ok(())
    }

    /// Inserts a brand-new record; fails if the id exists in cache or store.
    pub fn insert_new(&self, node: &str, record: ObjectRecord) -> Result<(), StoreError> {
        let topo = self.topology.read();
        let part = self.owned_partition(&topo, node, &record.id)?;
        let mut st = part.state.lock();
        if st.entries.contains_key(&record.id) || self.store.read(&record.id)?.is_some() {
            return Err(StoreError::AlreadyExists(record.id));
        }
        self.apply_write(&part, &mut st, record)
    }

    /// Atomically replaces the state of `id` if its version is still
    /// `expected`, bumping the version by one.
    pub fn compare_and_swap(
        &self,
        node: &str,
        id: &ObjectId,
        expected: u64,
        state: StateDocument,
    ) -> Result<ObjectRecord, StoreError> {
        let topo = self.topology.read();
        let part = self.owned_partition(&topo, node, id)?;
        let mut st = part.state.lock();
        if !self.load(&part, &mut st, id)? {
            return Err(StoreError::NotFound(id.clone()));
        }
        let current = &st.entries[id].record;
        if self.take_conflict_fault(id) || current.version != expected {
            return Err(StoreError::VersionConflict {
                current: current.version,
            });
        }
        let next = current.successor(state);
        self.apply_write(&part, &mut st, next.clone())?;
        Ok(next)
    }

    fn take_conflict_fault(&self, id: &ObjectId) -> bool {
        let mut faults = self.conflict_faults.lock();
        match faults.get_mut(id) {
            Some(n) if *n > 0 => {
                *n -= 1;
                if *n == 0 {
                    faults.remove(id);
                }
                true
            }
            _ => false,
        }
    }

    /// Failure injection: the next `n` swaps on `id` report a version
    /// conflict without touching the record.
    pub fn inject_commit_conflicts(&self, id: &ObjectId, n: u32) {
        if n > 0 {
            self.conflict_faults.lock().insert(id.clone(), n);
        }
    }

    /// Persists every dirty entry of `node` in per-class batches.
    pub fn flush(&self, node: &str) -> Result<FlushReport, StoreError> {
        let part = self
            .topology
            .read()
            .partitions
            .get(node)
            .cloned()
            .ok_or_else(|| StoreError::UnknownNode(node.to_string()))?;
        self.flush_partition(&part)
    }

    fn flush_partition(&self, part: &Partition) -> Result<FlushReport, StoreError> {
        let _serial = part.flush_lock.lock();
        let now = Instant::now();
        let mut by_class: BTreeMap<String, Vec<ObjectRecord>> = BTreeMap::new();
        let mut staleness = Duration::ZERO;
        {
            let st = part.state.lock();
            if st.dirty == 0 {
                return Ok(FlushReport::default());
            }
            for e in st.entries.values().filter(|e| e.dirty) {
                if let Some(at) = e.dirtied_at {
                    staleness = staleness.max(now.saturating_duration_since(at));
                }
                by_class.entry(e.record.cls.clone()).or_default().push(e.record.clone());
            }
        }
        let mut report = FlushReport {
            max_staleness_ms: staleness.as_millis() as u64,
            ..Default::default()
        };
        for (cls, records) in by_class {
            let batch = self.policy(&cls).batch_size.max(1);
            for chunk in records.chunks(batch) {
                report.store_write_calls += 1;
                part.write_calls.fetch_add(1, Ordering::Relaxed);
                if let Err(e) = self.store.persist_batch(&part.node, chunk) {
                    warn!(node = %part.node, error = %e, "flush failed; entries stay dirty");
                    return Err(e);
                }
                let mut st = part.state.lock();
                for r in chunk {
                    st.mark_clean(&r.id, r.version);
                }
                report.entries_flushed += chunk.len();
            }
        }
        debug!(node = %part.node, flushed = report.entries_flushed, calls = report.store_write_calls, "flush");
        Ok(report)
    }

    pub fn flush_all(&self) -> Result<FlushReport, StoreError> {
        let parts: Vec<_> = self.topology.read().partitions.values().cloned().collect();
        let mut total = FlushReport::default();
        for p in parts {
            total.absorb(self.flush_partition(&p)?);
        }
        Ok(total)
    }

    /// Moves to a new node set. Cached entries whose owner changes migrate
    /// with their dirty state; partitions of removed nodes are flushed first.
    pub fn set_nodes<I, S>(&self, nodes: I) -> Result<RebalanceReport, StoreError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut topo = self.topology.write();
        let mut ring = (*topo.ring).clone();
        ring.set_nodes(nodes);
        if ring.is_empty() {
            return Err(StoreError::RingEmpty);
        }
        let mut flushed = FlushReport::default();
        let removed: Vec<String> = topo
            .partitions
            .keys()
            .filter(|n| !ring.nodes().contains(*n))
            .cloned()
            .collect();
        for node in &removed {
            flushed.absorb(self.flush_partition(&topo.partitions[node])?);
        }
        for node in ring.nodes() {
            if !topo.partitions.contains_key(node) {
                let part = Arc::new(Partition::new(node.clone()));
                self.spawn_flusher(&part);
                topo.partitions.insert(node.clone(), part);
            }
        }

        let mut moving: Vec<(CacheEntry, String)> = Vec::new();
        let mut migrated = BTreeMap::new();
        for (node, part) in &topo.partitions {
            let mut st = part.state.lock();
            let ids: Vec<ObjectId> = st.entries.keys().cloned().collect();
            let plan = rebalance(&topo.ring, &ring, &ids)?;
            for (id, to) in plan {
                if &to == node {
                    continue;
                }
                if let Some(e) = st.remove(&id) {
                    migrated.insert(id, to.clone());
                    moving.push((e, to));
                }
            }
        }
        for (e, to) in moving {
            let part = &topo.partitions[&to];
            let mut st = part.state.lock();
            let (mode, dirty, flushed_version) = (e.mode, e.dirty, e.flushed_version);
            st.upsert(e.record, mode, dirty, flushed_version);
        }
        for node in &removed {
            topo.partitions.remove(node);
        }
        self.remapped.fetch_add(migrated.len() as u64, Ordering::Relaxed);
        topo.ring = Arc::new(ring);
        Ok(RebalanceReport { migrated, flushed })
    }

    pub fn metrics(&self) -> DhtMetrics {
        let topo = self.topology.read();
        let mut nodes: Vec<NodeMetrics> = topo
            .partitions
            .values()
            .map(|p| {
                let st = p.state.lock();
                NodeMetrics {
                    node: p.node.clone(),
                    cache_hits: p.hits.load(Ordering::Relaxed),
                    cache_misses: p.misses.load(Ordering::Relaxed),
                    store_write_calls: p.write_calls.load(Ordering::Relaxed),
                    dirty_entries: st.dirty,
                    entries: st.entries.len(),
                }
            })
            .collect();
        nodes.sort_by(|a, b| a.node.cmp(&b.node));
        DhtMetrics {
            nodes,
            remapped_keys: self.remapped.load(Ordering::Relaxed),
            store_write_calls: self.store.write_calls(),
        }
    }

    /// Inspects the cached entry for `id` on its owner, without loading.
    pub fn peek(&self, id: &ObjectId) -> Option<CacheEntry> {
        let topo = self.topology.read();
        let node = topo.ring.owner_of(id.as_str()).ok()?;
        let st = topo.partitions.get(node)?.state.lock();
        st.entries.get(id).cloned()
    }

    fn flush_tick(&self) -> Duration {
        let min = self
            .policies
            .read()
            .values()
            .filter(|p| p.mode == PersistenceMode::WriteBehind)
            .map(|p| p.flush_interval_ms)
            .min()
            .unwrap_or(self.config.default_policy.flush_interval_ms);
        Duration::from_millis(min.max(1))
    }

    /// Starts one background flusher per node on the current tokio runtime.
    /// Nodes added later get their own flusher automatically.
    pub fn start_flushers(self: &Arc<Self>) {
        *self.runtime.lock() = Some(tokio::runtime::Handle::current());
        *self.weak.lock() = Some(Arc::downgrade(self));
        let parts: Vec<_> = self.topology.read().partitions.values().cloned().collect();
        for p in parts {
            self.spawn_flusher(&p);
        }
    }

    fn spawn_flusher(&self, part: &Arc<Partition>) {
        let Some(handle) = self.runtime.lock().clone() else {
            return;
        };
        let weak_part: Weak<Partition> = Arc::downgrade(part);
        let weak_self = self.self_ref();
        handle.spawn(async move {
            loop {
                let tick = match weak_self.as_ref().and_then(Weak::upgrade) {
                    Some(dht) => dht.flush_tick(),
                    None => return,
                };
                let Some(part) = weak_part.upgrade() else { return };
                tokio::select! {
                    _ = tokio::time::sleep(tick) => {}
                    _ = part.flush_signal.notified() => {}
                }
                let Some(dht) = weak_self.as_ref().and_then(Weak::upgrade) else { return };
                let still_member = dht
                    .topology
                    .read()
                    .partitions
                    .get(&part.node)
                    .is_some_and(|p| Arc::ptr_eq(p, &part));
                if !still_member {
                    return;
                }
                let res = tokio::task::spawn_blocking(move || dht.flush_partition(&part)).await;
                if let Ok(Err(e)) = res {
                    debug!(error = %e, "background flush will retry");
                }
            }
        });
    }

    fn self_ref(&self) -> Option<Weak<Dht>> {
        self.weak.lock().clone()
    }
}
