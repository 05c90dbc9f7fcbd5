use std::collections::BTreeSet;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use super::error::StoreError;
use super::record::ObjectId;

/// Blob bytes on local disk under `{root}/{objectId}/{key}`.
#[derive(Debug, Clone)]
pub struct BlobStore {
    root: PathBuf,
}

fn safe_segment(s: &str) -> bool {
    !s.is_empty()
        && s != "."
        && s != ".."
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
}

impl BlobStore {
    pub fn new(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(BlobStore { root })
    }

    fn path(&self, id: &ObjectId, key: &str) -> Result<PathBuf, StoreError> {
        if !safe_segment(id.as_str()) || !safe_segment(key) {
            return Err(StoreError::Forbidden("illegal blob path".into()));
        }
        Ok(self.root.join(id.as_str()).join(key))
    }

    pub fn put(&self, id: &ObjectId, key: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let path = self.path(id, key)?;
        let dir = path.parent().expect("blob path has a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{key}.{}", uuid::Uuid::new_v4()));
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    pub fn get(&self, id: &ObjectId, key: &str) -> Result<Vec<u8>, StoreError> {
        match fs::read(self.path(id, key)?) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == ErrorKind::NotFound => Err(StoreError::BlobNotFound {
                id: id.clone(),
                key: key.to_string(),
            }),
            Err(e) => Err(e.into()),
        }
    }

    pub fn exists(&self, id: &ObjectId, key: &str) -> bool {
        self.path(id, key).map(|p| p.is_file()).unwrap_or(false)
    }

    pub fn stored_keys(&self, id: &ObjectId) -> BTreeSet<String> {
        let Ok(dir) = self.path(id, "_").map(|p| p.parent().unwrap().to_path_buf()) else {
            return BTreeSet::new();
        };
        let Ok(entries) = fs::read_dir(dir) else {
            return BTreeSet::new();
        };
        entries
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| !n.starts_with('.'))
            .collect()
    }
}
