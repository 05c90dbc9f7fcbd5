//! Object records, fail-safe state transitions, durable storage and
//! presigned blob access.
//!
//! Transitions are optimistic: [`StateStore::begin_transition`] hands out a
//! token carrying the version the caller read, and
//! [`StateStore::commit_transition`] swaps the state in only if the object is
//! still at that version. Nothing is applied before commit, so a failed
//! function invocation never leaves a partial state behind.

mod blob;
mod durable;
mod error;
mod presign;
mod record;
mod transition;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use blob::BlobStore;
pub use durable::{DurableStore, FileStore, MemoryStore};
pub use error::StoreError;
pub use presign::{BlobMode, BlobQuery, PresignedUrl, Presigner};
pub use record::{
    now_millis, now_secs, state_size, ObjectId, ObjectRecord, StateDocument, MAX_STATE_BYTES,
};
pub use transition::{TokenLedger, TransitionToken};

use crate::class::ResolvedClass;
use crate::dht::Dht;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PersistenceMode {
    /// Every committed transition is durably written before it is acknowledged.
    WriteThrough,
    /// Transitions land in the cache and are flushed in batches.
    WriteBehind,
    /// No durable writes at all.
    MemoryOnly,
}

/// Deployed classes, as seen by the store.
pub trait ClassDirectory: Send + Sync {
    fn resolved_class(&self, name: &str) -> Option<Arc<ResolvedClass>>;
}

pub struct StateStore {
    dht: Arc<Dht>,
    tokens: TokenLedger,
    blobs: BlobStore,
    signer: Presigner,
    classes: Arc<dyn ClassDirectory>,
}

const ROUTE_ATTEMPTS: usize = 3;

impl StateStore {
    pub fn new(dht: Arc<Dht>, blobs: BlobStore, signer: Presigner, classes: Arc<dyn ClassDirectory>) -> Self {
        StateStore {
            dht,
            tokens: TokenLedger::default(),
            blobs,
            signer,
            classes,
        }
    }

    pub fn dht(&self) -> &Arc<Dht> {
        &self.dht
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    pub fn signer(&self) -> &Presigner {
        &self.signer
    }

    pub fn tokens(&self) -> &TokenLedger {
        &self.tokens
    }

    /// Runs `op` on the owner of `id`, re-routing if ownership moved underneath.
    fn on_owner<T>(&self, id: &ObjectId, mut op: impl FnMut(&str) -> Result<T, StoreError>) -> Result<T, StoreError> {
        let mut last = None;
        for _ in 0..ROUTE_ATTEMPTS {
            let node = self.dht.owner_of(id)?;
            match op(&node) {
                Err(e @ StoreError::NotOwner { .. }) => last = Some(e),
                other => return other,
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn class(&self, name: &str) -> Result<Arc<ResolvedClass>, StoreError> {
        self.classes
            .resolved_class(name)
            .ok_or_else(|| StoreError::UnknownClass(name.to_string()))
    }

    pub fn create_object(&self, cls: &str, init_state: StateDocument) -> Result<ObjectRecord, StoreError> {
        self.create_object_with_id(ObjectId::generate(), cls, init_state)
    }

    pub fn create_object_with_id(
        &self,
        id: ObjectId,
        cls: &str,
        init_state: StateDocument,
    ) -> Result<ObjectRecord, StoreError> {
        let rc = self.class(cls)?;
        let size = state_size(&init_state);
        if size > MAX_STATE_BYTES {
            return Err(StoreError::StateTooLarge(size));
        }
        let record = ObjectRecord::new(id, rc.name.clone(), init_state);
        self.on_owner(&record.id, |node| self.dht.insert_new(node, record.clone()))?;
        Ok(record)
    }

    /// Latest committed record, with `blob_keys` reflecting stored blobs.
    pub fn get_object(&self, id: &ObjectId) -> Result<ObjectRecord, StoreError> {
        let mut record = self.on_owner(id, |node| self.dht.cache_get(node, id))?;
        if self
            .classes
            .resolved_class(&record.cls)
            .is_some_and(|rc| !rc.effective_key_specs.is_empty())
        {
            record.blob_keys = self.blobs.stored_keys(id);
        }
        Ok(record)
    }

    pub fn begin_transition(&self, id: &ObjectId, expected_version: u64) -> Result<TransitionToken, StoreError> {
        self.on_owner(id, |node| self.dht.cache_get(node, id))?;
        Ok(self.tokens.issue(id.clone(), expected_version))
    }

    /// Applies `new_state` iff the object is still at the token's version.
    /// The token is spent whether or not the swap succeeds.
    pub fn commit_transition(
        &self,
        token: &TransitionToken,
        new_state: StateDocument,
    ) -> Result<ObjectRecord, StoreError> {
        self.tokens.redeem(token)?;
        let size = state_size(&new_state);
        if size > MAX_STATE_BYTES {
            return Err(StoreError::StateTooLarge(size));
        }
        self.on_owner(&token.object_id, |node| {
            self.dht.compare_and_swap(
                node,
                &token.object_id,
                token.expected_version,
                new_state.clone(),
            )
        })
    }

    pub fn abort_transition(&self, token: &TransitionToken) {
        let _ = self.tokens.redeem(token);
    }

    pub fn presign_blob(
        &self,
        id: &ObjectId,
        key: &str,
        mode: BlobMode,
        ttl_seconds: u64,
    ) -> Result<PresignedUrl, StoreError> {
        let record = self.on_owner(id, |node| self.dht.cache_get(node, id))?;
        let rc = self.class(&record.cls)?;
        if !rc.has_key(key) {
            return Err(StoreError::UnknownKey {
                cls: rc.name.clone(),
                key: key.to_string(),
            });
        }
        Ok(self.signer.sign(id, key, mode, now_secs() + ttl_seconds))
    }

    /// Presigned GET. The signature is checked before anything else is looked up.
    pub fn read_blob(&self, object_id: &str, key: &str, query: &BlobQuery) -> Result<Vec<u8>, StoreError> {
        self.signer
            .verify(object_id, key, query, BlobMode::Get, now_secs())?;
        self.blobs.get(&ObjectId::from(object_id), key)
    }

    /// Presigned PUT.
    pub fn write_blob(&self, object_id: &str, key: &str, query: &BlobQuery, bytes: &[u8]) -> Result<(), StoreError> {
        self.signer
            .verify(object_id, key, query, BlobMode::Put, now_secs())?;
        self.blobs.put(&ObjectId::from(object_id), key, bytes)
    }

    /// Direct (unsigned) blob access for the control plane.
    pub fn put_blob(&self, id: &ObjectId, key: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let record = self.get_object(id)?;
        let rc = self.class(&record.cls)?;
        if !rc.has_key(key) {
            return Err(StoreError::UnknownKey {
                cls: rc.name.clone(),
                key: key.to_string(),
            });
        }
        self.blobs.put(id, key, bytes)
    }

    pub fn get_blob(&self, id: &ObjectId, key: &str) -> Result<Vec<u8>, StoreError> {
        let record = self.get_object(id)?;
        let rc = self.class(&record.cls)?;
        if !rc.has_key(key) {
            return Err(StoreError::UnknownKey {
                cls: rc.name.clone(),
                key: key.to_string(),
            });
        }
        self.blobs.get(id, key)
    }

    pub fn persist_batch(&self, partition: &str, records: &[ObjectRecord]) -> Result<usize, StoreError> {
        self.dht.store().persist_batch(partition, records)
    }
}

impl ClassDirectory for parking_lot::RwLock<std::collections::HashMap<String, Arc<ResolvedClass>>> {
    fn resolved_class(&self, name: &str) -> Option<Arc<ResolvedClass>> {
        self.read().get(name).cloned()
    }
}

#[cfg(test)]
mod tests;
