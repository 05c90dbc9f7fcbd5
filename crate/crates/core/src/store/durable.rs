//! Durable backing stores.
//!
//! [`FileStore`] layout: one append-only log per partition, `<dir>/<partition>.log`.
//! Each line is one JSON-encoded [`ObjectRecord`]. An in-memory index maps every
//! object id to the file offset of its highest persisted version; it is rebuilt
//! by replaying all logs on open (a torn trailing line is ignored). A log is
//! compacted in place once it holds more than [`COMPACT_MIN_LINES`] lines and
//! fewer than a third of them are live.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use parking_lot::Mutex;

use super::error::StoreError;
use super::record::{ObjectId, ObjectRecord};

/// Narrow interface to durable storage. Writes are idempotent by
/// `(id, version)`: a record at or below the stored version is skipped.
pub trait DurableStore: Send + Sync {
    /// Persists all `records` with exactly one backing write call. Returns the
    /// number of records that were newer than what was stored.
    fn persist_batch(&self, partition: &str, records: &[ObjectRecord]) -> Result<usize, StoreError>;

    fn read(&self, id: &ObjectId) -> Result<Option<ObjectRecord>, StoreError>;

    /// Number of backing write calls issued so far.
    fn write_calls(&self) -> u64;
}

/// Heap-backed store with a write counter and failure injection, for tests
/// and for wiring the platform without a data directory.
#[derive(Default)]
pub struct MemoryStore {
    records: Mutex<HashMap<ObjectId, ObjectRecord>>,
    calls: AtomicU64,
    failures: AtomicU32,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// The next `n` write calls fail with `StoreUnavailable` and persist nothing.
    pub fn fail_next_writes(&self, n: u32) {
        self.failures.store(n, Ordering::SeqCst);
    }

    pub fn len(&self) -> usize {
        self.records.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn version_of(&self, id: &ObjectId) -> Option<u64> {
        self.records.lock().get(id).map(|r| r.version)
    }
}

impl DurableStore for MemoryStore {
    fn persist_batch(&self, _partition: &str, records: &[ObjectRecord]) -> Result<usize, StoreError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let injected = self
            .failures
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if injected {
            return Err(StoreError::StoreUnavailable("injected failure".into()));
        }
        let mut map = self.records.lock();
        let mut written = 0;
        for r in records {
            let newer = map.get(&r.id).map_or(true, |cur| r.version > cur.version);
            if newer {
                map.insert(r.id.clone(), r.clone());
                written += 1;
            }
        }
        Ok(written)
    }

    fn read(&self, id: &ObjectId) -> Result<Option<ObjectRecord>, StoreError> {
        Ok(self.records.lock().get(id).cloned())
    }

    fn write_calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

const COMPACT_MIN_LINES: u64 = 4096;

#[derive(Debug, Clone)]
struct Location {
    partition: String,
    offset: u64,
    len: u64,
    version: u64,
}

struct LogFile {
    file: File,
    end: u64,
    lines: u64,
}

struct FileInner {
    logs: HashMap<String, LogFile>,
    index: HashMap<ObjectId, Location>,
}

pub struct FileStore {
    dir: PathBuf,
    sync: bool,
    inner: Mutex<FileInner>,
    calls: AtomicU64,
}

impl FileStore {
    /// Opens (or creates) a store in `dir`, replaying existing logs.
    /// With `sync`, every write call ends with an fsync of the touched log.
    pub fn open(dir: impl AsRef<Path>, sync: bool) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut inner = FileInner {
            logs: HashMap::new(),
            index: HashMap::new(),
        };
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("log") {
                continue;
            }
            let Some(partition) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string)
            else {
                continue;
            };
            let (end, lines) = replay(&path, &partition, &mut inner.index)?;
            let file = OpenOptions::new().read(true).write(true).open(&path)?;
            file.set_len(end)?;
            inner.logs.insert(partition, LogFile { file, end, lines });
        }
        Ok(FileStore {
            dir,
            sync,
            inner: Mutex::new(inner),
            calls: AtomicU64::new(0),
        })
    }

    fn log_path(&self, partition: &str) -> PathBuf {
        self.dir.join(format!("{partition}.log"))
    }

    pub fn len(&self) -> usize {
        self.inner.lock().index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn compact(&self, inner: &mut FileInner, partition: &str) -> Result<(), StoreError> {
        let live: Vec<(ObjectId, Location)> = inner
            .index
            .iter()
            .filter(|(_, loc)| loc.partition == partition)
            .map(|(id, loc)| (id.clone(), loc.clone()))
            .collect();
        let log = inner.logs.get_mut(partition).expect("log exists");
        let tmp_path = self.dir.join(format!("{partition}.log.compact"));
        let mut tmp = File::create(&tmp_path)?;
        let mut offset = 0u64;
        let mut moved = Vec::with_capacity(live.len());
        for (id, loc) in live {
            let mut buf = vec![0u8; loc.len as usize];
            log.file.seek(SeekFrom::Start(loc.offset))?;
            log.file.read_exact(&mut buf)?;
            tmp.write_all(&buf)?;
            moved.push((id, offset, loc.len));
            offset += loc.len;
        }
        tmp.sync_all()?;
        drop(tmp);
        fs::rename(&tmp_path, self.log_path(partition))?;
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(self.log_path(partition))?;
        *log = LogFile {
            file,
            end: offset,
            lines: moved.len() as u64,
        };
        for (id, off, _) in moved {
            if let Some(loc) = inner.index.get_mut(&id) {
                loc.offset = off;
            }
        }
        Ok(())
    }
}

fn replay(
    path: &Path,
    partition: &str,
    index: &mut HashMap<ObjectId, Location>,
) -> Result<(u64, u64), StoreError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut offset = 0u64;
    let mut lines = 0u64;
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line)? as u64;
        if n == 0 || line.last() != Some(&b'\n') {
            break;
        }
        let Ok(record) = serde_json::from_slice::<ObjectRecord>(&line[..line.len() - 1]) else {
            break;
        };
        let newer = index
            .get(&record.id)
            .map_or(true, |loc| record.version > loc.version);
        if newer {
            index.insert(
                record.id.clone(),
                Location {
                    partition: partition.to_string(),
                    offset,
                    len: n,
                    version: record.version,
                },
            );
        }
        offset += n;
        lines += 1;
    }
    Ok((offset, lines))
}

impl DurableStore for FileStore {
    fn persist_batch(&self, partition: &str, records: &[ObjectRecord]) -> Result<usize, StoreError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut inner = self.inner.lock();
        let fresh: Vec<&ObjectRecord> = records
            .iter()
            .filter(|r| {
                inner
                    .index
                    .get(&r.id)
                    .map_or(true, |loc| r.version > loc.version)
            })
            .collect();
        if fresh.is_empty() {
            return Ok(0);
        }
        let mut buf = Vec::new();
        let mut spans = Vec::with_capacity(fresh.len());
        for r in &fresh {
            let start = buf.len() as u64;
            let mut stored = (*r).clone();
            stored.blob_keys.clear();
            serde_json::to_writer(&mut buf, &stored)
                .map_err(|e| StoreError::Io(e.to_string()))?;
            buf.push(b'\n');
            spans.push((start, buf.len() as u64 - start));
        }
        if !inner.logs.contains_key(partition) {
            let file = OpenOptions::new()
                .create(true)
                .read(true)
                .write(true)
                .truncate(false)
                .open(self.log_path(partition))?;
            let end = file.metadata()?.len();
            inner.logs.insert(partition.to_string(), LogFile { file, end, lines: 0 });
        }
        let log = inner.logs.get_mut(partition).expect("log exists");
        let base = log.end;
        log.file.seek(SeekFrom::Start(base))?;
        if let Err(e) = log.file.write_all(&buf) {
            let _ = log.file.set_len(base);
            return Err(StoreError::StoreUnavailable(e.to_string()));
        }
        if self.sync {
            log.file
                .sync_data()
                .map_err(|e| StoreError::StoreUnavailable(e.to_string()))?;
        }
        log.end += buf.len() as u64;
        log.lines += fresh.len() as u64;
        let lines = log.lines;
        for (r, (start, len)) in fresh.iter().zip(spans) {
            inner.index.insert(
                r.id.clone(),
                Location {
                    partition: partition.to_string(),
                    offset: base + start,
                    len,
                    version: r.version,
                },
            );
        }
        if lines > COMPACT_MIN_LINES {
            let live = inner
                .index
                .values()
                .filter(|l| l.partition == partition)
                .count() as u64;
            if live * 3 < lines {
                self.compact(&mut inner, partition)?;
            }
        }
        Ok(fresh.len())
    }

    fn read(&self, id: &ObjectId) -> Result<Option<ObjectRecord>, StoreError> {
        let mut inner = self.inner.lock();
        let Some(loc) = inner.index.get(id).cloned() else {
            return Ok(None);
        };
        let log = inner
            .logs
            .get_mut(&loc.partition)
            .ok_or_else(|| StoreError::Io(format!("missing log {}", loc.partition)))?;
        let mut buf = vec![0u8; loc.len as usize];
        log.file.seek(SeekFrom::Start(loc.offset))?;
        log.file.read_exact(&mut buf)?;
        let record = serde_json::from_slice(&buf[..buf.len() - 1])
            .map_err(|e| StoreError::Io(e.to_string()))?;
        Ok(Some(record))
    }

    fn write_calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;
    use crate::store::record::StateDocument;

    fn rec(id: &str, version: u64, n: i64) -> ObjectRecord {
        let mut state = StateDocument::new();
        state.insert("n".into(), json!(n));
        let mut r = ObjectRecord::new(ObjectId::from(id), "C", state);
        r.version = version;
        r
    }

    #[test]
    fn one_call_per_batch() {
        let store = MemoryStore::new();
        let batch: Vec<_> = (0..250).map(|i| rec(&format!("o{i}"), 1, i)).collect();
        assert_eq!(store.persist_batch("n1", &batch).unwrap(), 250);
        assert_eq!(store.write_calls(), 1);
        assert_eq!(store.persist_batch("n1", &batch).unwrap(), 0);
        assert_eq!(store.write_calls(), 2);
    }

    #[test]
    fn memory_failure_injection() {
        let store = MemoryStore::new();
        store.fail_next_writes(1);
        assert!(matches!(
            store.persist_batch("n1", &[rec("a", 1, 1)]),
            Err(StoreError::StoreUnavailable(_))
        ));
        assert!(store.is_empty());
        assert_eq!(store.persist_batch("n1", &[rec("a", 1, 1)]).unwrap(), 1);
    }

    #[test]
    fn file_store_replays_highest_version() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = FileStore::open(dir.path(), true).unwrap();
            store.persist_batch("n1", &[rec("a", 1, 1), rec("b", 1, 10)]).unwrap();
            store.persist_batch("n2", &[rec("a", 3, 3)]).unwrap();
            // older version arriving late is a no-op
            assert_eq!(store.persist_batch("n1", &[rec("a", 2, 2)]).unwrap(), 0);
            assert_eq!(store.read(&"a".into()).unwrap().unwrap().version, 3);
        }
        let store = FileStore::open(dir.path(), false).unwrap();
        let a = store.read(&"a".into()).unwrap().unwrap();
        assert_eq!((a.version, a.state["n"].clone()), (3, json!(3)));
        assert_eq!(store.read(&"b".into()).unwrap().unwrap().version, 1);
        assert_eq!(store.read(&"zz".into()).unwrap(), None);
    }

    #[test]
    fn torn_tail_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = FileStore::open(dir.path(), false).unwrap();
            store.persist_batch("n1", &[rec("a", 1, 1)]).unwrap();
        }
        let path = dir.path().join("n1.log");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"id":"a","cls":"C","sta"#).unwrap();
        drop(f);
        let store = FileStore::open(dir.path(), false).unwrap();
        assert_eq!(store.read(&"a".into()).unwrap().unwrap().version, 1);
        store.persist_batch("n1", &[rec("a", 2, 2)]).unwrap();
        drop(store);
        let store = FileStore::open(dir.path(), false).unwrap();
        assert_eq!(store.read(&"a".into()).unwrap().unwrap().version, 2);
    }

    #[test]
    fn compaction_keeps_latest() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path(), false).unwrap();
        for v in 1..=(COMPACT_MIN_LINES + 10) {
            store.persist_batch("n1", &[rec("a", v, v as i64), rec("b", v, 0)]).unwrap();
        }
        let size = fs::metadata(dir.path().join("n1.log")).unwrap().len();
        assert!(size < 200 * 1000, "log not compacted: {size} bytes");
        let last = COMPACT_MIN_LINES + 10;
        assert_eq!(store.read(&"a".into()).unwrap().unwrap().version, last);
        drop(store);
        let store = FileStore::open(dir.path(), false).unwrap();
        assert_eq!(store.read(&"b".into()).unwrap().unwrap().version, last);
    }
}
