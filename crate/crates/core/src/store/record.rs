use std::collections::BTreeSet;
use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Structured object state: a string-keyed JSON tree.
pub type StateDocument = Map<String, Value>;

/// Upper bound on the serialized size of one state document.
pub const MAX_STATE_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(String);

impl ObjectId {
    pub fn new(id: impl Into<String>) -> Self {
        ObjectId(id.into())
    }

    pub fn generate() -> Self {
        ObjectId(uuid::Uuid::new_v4().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ObjectId {
    fn from(s: &str) -> Self {
        ObjectId(s.to_string())
    }
}

impl From<String> for ObjectId {
    fn from(s: String) -> Self {
        ObjectId(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ObjectRecord {
    pub id: ObjectId,
    pub cls: String,
    pub state: StateDocument,
    /// Keys with a stored blob. Filled from the blob store on read; not versioned.
    #[serde(default)]
    pub blob_keys: BTreeSet<String>,
    pub version: u64,
    /// Unix milliseconds of the last committed transition (or creation).
    pub last_committed_at: u64,
}

impl ObjectRecord {
    pub fn new(id: ObjectId, cls: impl Into<String>, state: StateDocument) -> Self {
        ObjectRecord {
            id,
            cls: cls.into(),
            state,
            blob_keys: BTreeSet::new(),
            version: 0,
            last_committed_at: now_millis(),
        }
    }

    /// The record after one committed transition to `state`.
    pub fn successor(&self, state: StateDocument) -> Self {
        ObjectRecord {
            id: self.id.clone(),
            cls: self.cls.clone(),
            state,
            blob_keys: self.blob_keys.clone(),
            version: self.version + 1,
            last_committed_at: now_millis(),
        }
    }
}

pub fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn now_secs() -> u64 {
    now_millis() / 1000
}

pub fn state_size(state: &StateDocument) -> usize {
    serde_json::to_vec(state).map(|v| v.len()).unwrap_or(usize::MAX)
}
