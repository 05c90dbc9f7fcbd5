//! The task wire protocol spoken with function runtimes.
//!
//! Request, `POST {endpoint}/task`:
//!
//! ```json
//! {"taskId": "...", "objectId": "...", "cls": "Image", "fnName": "resize",
//!  "state": {}, "payload": {}, "payloadEncoding": "json",
//!  "blobs": {"image": {"getUrl": "...", "putUrl": "..."}}, "deadlineMs": 30000}
//! ```
//!
//! Response, status 200:
//!
//! ```json
//! {"taskId": "...", "status": "ok", "output": {}, "newState": {},
//!  "blobsWritten": ["image"]}
//! ```
//!
//! or `"status": "error"` with `"error": {"code": "...", "message": "..."}`.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::store::{ObjectId, StateDocument};

/// An invocation argument: structured JSON, or opaque bytes.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Json(Value),
    Bytes(Vec<u8>),
}

impl Default for Payload {
    fn default() -> Self {
        Payload::Json(Value::Object(Default::default()))
    }
}

impl From<Value> for Payload {
    fn from(v: Value) -> Self {
        Payload::Json(v)
    }
}

impl Payload {
    pub fn as_json(&self) -> Option<&Value> {
        match self {
            Payload::Json(v) => Some(v),
            Payload::Bytes(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadEncoding {
    Json,
    Base64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BlobUrls {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub get_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub put_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", into = "WireTask", try_from = "WireTask")]
pub struct InvocationTask {
    pub task_id: String,
    pub object_id: ObjectId,
    pub cls: String,
    pub fn_name: String,
    pub state: StateDocument,
    pub payload: Payload,
    pub blobs: BTreeMap<String, BlobUrls>,
    pub deadline_ms: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WireTask {
    task_id: String,
    object_id: ObjectId,
    cls: String,
    fn_name: String,
    state: StateDocument,
    #[serde(default)]
    payload: Value,
    #[serde(default = "json_encoding")]
    payload_encoding: PayloadEncoding,
    #[serde(default)]
    blobs: BTreeMap<String, BlobUrls>,
    deadline_ms: u64,
}

fn json_encoding() -> PayloadEncoding {
    PayloadEncoding::Json
}

impl From<InvocationTask> for WireTask {
    fn from(t: InvocationTask) -> Self {
        let (payload, payload_encoding) = match t.payload {
            Payload::Json(v) => (v, PayloadEncoding::Json),
            Payload::Bytes(b) => (Value::String(B64.encode(b)), PayloadEncoding::Base64),
        };
        WireTask {
            task_id: t.task_id,
            object_id: t.object_id,
            cls: t.cls,
            fn_name: t.fn_name,
            state: t.state,
            payload,
            payload_encoding,
            blobs: t.blobs,
            deadline_ms: t.deadline_ms,
        }
    }
}

impl TryFrom<WireTask> for InvocationTask {
    type Error = String;

    fn try_from(w: WireTask) -> Result<Self, Self::Error> {
        let payload = match w.payload_encoding {
            PayloadEncoding::Json => Payload::Json(w.payload),
            PayloadEncoding::Base64 => {
                let Value::String(s) = w.payload else {
                    return Err("base64 payload must be a string".into());
                };
                Payload::Bytes(B64.decode(s).map_err(|e| e.to_string())?)
            }
        };
        Ok(InvocationTask {
            task_id: w.task_id,
            object_id: w.object_id,
            cls: w.cls,
            fn_name: w.fn_name,
            state: w.state,
            payload,
            blobs: w.blobs,
            deadline_ms: w.deadline_ms,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskResult {
    pub task_id: String,
    pub status: TaskStatus,
    #[serde(default)]
    pub output: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_state: Option<StateDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blobs_written: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<TaskError>,
}

impl TaskResult {
    pub fn ok(task: &InvocationTask, output: Value, new_state: StateDocument) -> Self {
        TaskResult {
            task_id: task.task_id.clone(),
            status: TaskStatus::Ok,
            output,
            new_state: Some(new_state),
            blobs_written: None,
            error: None,
        }
    }

    pub fn error(task: &InvocationTask, code: impl Into<String>, message: impl Into<String>) -> Self {
        TaskResult {
            task_id: task.task_id.clone(),
            status: TaskStatus::Error,
            output: Value::Null,
            new_state: None,
            blobs_written: None,
            error: Some(TaskError {
                code: code.into(),
                message: message.into(),
            }),
        }
    }

    pub fn with_blobs_written(mut self, keys: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.blobs_written = Some(keys.into_iter().map(Into::into).collect());
        self
    }
}
