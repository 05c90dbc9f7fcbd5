use std::collections::HashMap;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use super::error::StoreError;
use super::record::{now_millis, ObjectId};

/// Permission to commit one state transition against `expected_version`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TransitionToken {
    pub object_id: ObjectId,
    pub expected_version: u64,
    pub token_id: Uuid,
    pub opened_at: u64,
}

/// Tracks open tokens; each can be redeemed (committed or aborted) once.
#[derive(Debug, Default)]
pub struct TokenLedger {
    open: Mutex<HashMap<Uuid, ObjectId>>,
}

impl TokenLedger {
    pub fn issue(&self, object_id: ObjectId, expected_version: u64) -> TransitionToken {
        let token = TransitionToken {
            object_id,
            expected_version,
            token_id: Uuid::new_v4(),
            opened_at: now_millis(),
        };
        self.open.lock().insert(token.token_id, token.object_id.clone());
        token
    }

    /// Consumes the token; fails if it was already redeemed or never issued.
    pub fn redeem(&self, token: &TransitionToken) -> Result<(), StoreError> {
        match self.open.lock().remove(&token.token_id) {
            Some(id) if id == token.object_id => Ok(()),
            _ => Err(StoreError::TokenReused),
        }
    }

    pub fn open_count(&self) -> usize {
        self.open.lock().len()
    }
}
