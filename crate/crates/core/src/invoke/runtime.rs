//! Function runtimes: remote HTTP endpoints and in-process handlers.
//!
//! Endpoints of the form `local://{name}` dispatch to a handler registered in
//! [`LocalRuntimes`]; anything else is treated as an HTTP base URL and receives
//! `POST {endpoint}/task`.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use futures::future::BoxFuture;
use futures::FutureExt;
use parking_lot::RwLock;
use reqwest::Url;

use super::error::InvokeError;
use super::wire::{InvocationTask, TaskResult};
use crate::store::{BlobQuery, StateStore, StoreError};

pub const LOCAL_SCHEME: &str = "local://";

#[derive(Debug, Clone)]
pub struct HttpRuntime {
    client: reqwest::Client,
}

impl Default for HttpRuntime {
    fn default() -> Self {
        HttpRuntime {
            client: reqwest::Client::new(),
        }
    }
}

impl HttpRuntime {
    pub fn new(client: reqwest::Client) -> Self {
        HttpRuntime { client }
    }

    pub async fn offload(&self, endpoint: &str, task: &InvocationTask) -> Result<TaskResult, InvokeError> {
        let url = format!("{}/task", endpoint.trim_end_matches('/'));
        let deadline = Duration::from_millis(task.deadline_ms);
        let classify = |e: reqwest::Error| {
            if e.is_timeout() {
                InvokeError::RuntimeTimeout {
                    endpoint: endpoint.to_string(),
                    deadline_ms: task.deadline_ms,
                }
            } else if e.is_decode() || e.is_body() {
                InvokeError::MalformedResult(e.to_string())
            } else {
                InvokeError::RuntimeUnreachable {
                    endpoint: endpoint.to_string(),
                    message: e.to_string(),
                }
            }
        };
        let resp = self
            .client
            .post(&url)
            .timeout(deadline)
            .json(task)
            .send()
            .await
            .map_err(classify)?;
        let status = resp.status();
        let body = resp.bytes().await.map_err(classify)?;
        if !status.is_success() {
            return Err(InvokeError::MalformedResult(format!(
                "runtime answered {status}: {}",
                String::from_utf8_lossy(&body[..body.len().min(200)])
            )));
        }
        serde_json::from_slice(&body).map_err(|e| InvokeError::MalformedResult(e.to_string()))
    }
}

/// What an in-process handler can reach besides its task: the blob URLs it
/// was given, resolved against the local store.
#[derive(Clone)]
pub struct LocalContext {
    store: Option<Arc<StateStore>>,
}

impl LocalContext {
    pub fn new(store: Option<Arc<StateStore>>) -> Self {
        LocalContext { store }
    }

    fn split(url: &str) -> Result<(String, String, BlobQuery), StoreError> {
        let bad = || StoreError::Forbidden(format!("not a blob url: {url}"));
        let parsed = Url::parse(url).map_err(|_| bad())?;
        let mut segs = parsed.path_segments().ok_or_else(bad)?;
        let (Some("blobs"), Some(id), Some(key), None) = (segs.next(), segs.next(), segs.next(), segs.next()) else {
            return Err(bad());
        };
        let mut q = BlobQuery::default();
        for (k, v) in parsed.query_pairs() {
            match k.as_ref() {
                "mode" => q.mode = Some(v.into_owned()),
                "expires" => q.expires = Some(v.into_owned()),
                "sig" => q.sig = Some(v.into_owned()),
                _ => {}
            }
        }
        Ok((id.to_string(), key.to_string(), q))
    }

    fn store(&self) -> Result<&StateStore, StoreError> {
        self.store
            .as_deref()
            .ok_or_else(|| StoreError::StoreUnavailable("no blob store attached".into()))
    }

    /// Reads through a presigned GET url.
    pub fn get_blob(&self, url: &str) -> Result<Vec<u8>, StoreError> {
        let (id, key, q) = Self::split(url)?;
        self.store()?.read_blob(&id, &key, &q)
    }

    /// Writes through a presigned PUT url.
    pub fn put_blob(&self, url: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let (id, key, q) = Self::split(url)?;
        self.store()?.write_blob(&id, &key, &q, bytes)
    }
}

pub type LocalHandler =
    Arc<dyn Fn(InvocationTask, LocalContext) -> BoxFuture<'static, Result<TaskResult, InvokeError>> + Send + Sync>;

/// Named in-process function runtimes.
#[derive(Clone, Default)]
pub struct LocalRuntimes {
    handlers: Arc<RwLock<HashMap<String, LocalHandler>>>,
}

impl LocalRuntimes {
    pub fn register(&self, name: impl Into<String>, handler: LocalHandler) {
        self.handlers.write().insert(name.into(), handler);
    }

    /// Registers a handler that runs synchronously and always produces a result.
    pub fn register_fn<F>(&self, name: impl Into<String>, f: F)
    where
        F: Fn(&InvocationTask, &LocalContext) -> TaskResult + Send + Sync + 'static,
    {
        let f = Arc::new(f);
        self.register(
            name,
            Arc::new(move |task, ctx| {
                let f = f.clone();
                async move { Ok(f(&task, &ctx)) }.boxed()
            }),
        );
    }

    pub fn get(&self, name: &str) -> Option<LocalHandler> {
        self.handlers.read().get(name).cloned()
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<_> = self.handlers.read().keys().cloned().collect();
        v.sort();
        v
    }
}
