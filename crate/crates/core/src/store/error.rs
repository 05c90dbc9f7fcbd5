use thiserror::Error;

use super::record::ObjectId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("unknown class {0}")]
    UnknownClass(String),
    #[error("object {0} not found")]
    NotFound(ObjectId),
    #[error("object {0} already exists")]
    AlreadyExists(ObjectId),
    #[error("version conflict: object is at version {current}")]
    VersionConflict { current: u64 },
    #[error("transition token already used or aborted")]
    TokenReused,
    #[error("class {cls} declares no key {key}")]
    UnknownKey { cls: String, key: String },
    #[error("blob {key} of object {id} has not been written")]
    BlobNotFound { id: ObjectId, key: String },
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("state document is {0} bytes, above the 1 MiB limit")]
    StateTooLarge(usize),
    #[error("durable store unavailable: {0}")]
    StoreUnavailable(String),
    #[error("node {node} does not own object {id}")]
    NotOwner { node: String, id: ObjectId },
    #[error("hash ring has no nodes")]
    RingEmpty,
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}
