//! REST surface over a [`Platform`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use oaas_core::class::PackageFormat;
use oaas_core::invoke::{InvokeError, Payload};
use oaas_core::platform::{Platform, PlatformError};
use oaas_core::runtime::{TemplateError, TemplateSpec};
use oaas_core::store::{BlobMode, BlobQuery, ObjectId, StateDocument, StoreError};
use serde::Deserialize;
use serde_json::{json, Value};

/// An error as it goes over the wire: `{"error": {"code", "message"}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub retry_after_ms: Option<u64>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.to_string(),
            message: message.into(),
            retry_after_ms: None,
        }
    }

    fn bad_request(code: &str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, code, message)
    }
}

fn status_for(code: &str) -> StatusCode {
    match code {
        "NotFound" | "UnknownClass" | "UnknownFunction" | "UnknownKey" | "BlobNotFound" | "UnknownTask" => {
            StatusCode::NOT_FOUND
        }
        "AlreadyExists" | "VersionConflict" | "TokenReused" | "ConflictRetriesExhausted" | "DuplicatePriority" => {
            StatusCode::CONFLICT
        }
        "Forbidden" => StatusCode::FORBIDDEN,
        "StateTooLarge" => StatusCode::PAYLOAD_TOO_LARGE,
        "RuntimeUnreachable" | "MalformedResult" | "UnresolvedEndpoint" => StatusCode::BAD_GATEWAY,
        "RuntimeTimeout" => StatusCode::GATEWAY_TIMEOUT,
        "Saturated" => StatusCode::TOO_MANY_REQUESTS,
        "InvalidDataflow" | "BadTarget" => StatusCode::UNPROCESSABLE_ENTITY,
        "StoreUnavailable" | "NotOwner" | "RingEmpty" | "UnknownNode" => StatusCode::SERVICE_UNAVAILABLE,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<InvokeError> for ApiError {
    fn from(e: InvokeError) -> Self {
        let root = e.root();
        let code = root.code();
        let retry_after_ms = match root {
            InvokeError::Saturated { retry_after_ms, .. } => Some(*retry_after_ms),
            _ => None,
        };
        ApiError {
            status: status_for(code),
            code: code.to_string(),
            message: e.to_string(),
            retry_after_ms,
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        InvokeError::Store(e).into()
    }
}

impl From<TemplateError> for ApiError {
    fn from(e: TemplateError) -> Self {
        match e {
            TemplateError::DuplicatePriority { .. } => ApiError::new(StatusCode::CONFLICT, "DuplicatePriority", e.to_string()),
            other => ApiError::bad_request("InvalidTemplate", other.to_string()),
        }
    }
}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        match e {
            PlatformError::Store(e) => e.into(),
            PlatformError::Template(e) => e.into(),
            PlatformError::Parse(e) => ApiError::bad_request("InvalidPackage", e.to_string()),
            PlatformError::UnknownClass(c) => ApiError::new(StatusCode::NOT_FOUND, "UnknownClass", format!("unknown class {c}")),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(json!({ "error": { "code": self.code, "message": self.message } }));
        let mut resp = (self.status, body).into_response();
        if let Some(ms) = self.retry_after_ms {
            let secs = ms.div_ceil(1000).max(1);
            resp.headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from(secs));
        }
        resp
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
}

fn is_json(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("json"))
}

fn is_bytes(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/octet-stream"))
}

fn utf8(body: &Bytes) -> ApiResult<&str> {
    std::str::from_utf8(body).map_err(|_| ApiError::bad_request("BadRequest", "body is not UTF-8"))
}

fn json_body(body: &Bytes) -> ApiResult<Option<Value>> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(None);
    }
    serde_json::from_slice(body)
        .map(Some)
        .map_err(|e| ApiError::bad_request("BadRequest", format!("invalid JSON body: {e}")))
}

pub fn router(platform: Arc<Platform>) -> Router {
    Router::new()
        .route("/classes", post(deploy).get(list_classes))
        .route("/classes/:name", get(get_class))
        .route("/classes/:name/objects", post(create_object))
        .route("/objects/:id", get(get_object))
        .route("/objects/:id/invoke/:func", post(invoke))
        .route("/objects/:id/invoke-async/:func", post(invoke_async))
        .route("/objects/:id/blobs/:key", get(get_blob_direct).put(put_blob_direct))
        .route("/objects/:id/blobs/:key/presign", get(presign))
        .route("/blobs/:id/:key", get(get_blob).put(put_blob))
        .route("/tasks/:task_id", get(task_status))
        .route("/runtimes", get(runtimes))
        .route("/templates", post(add_template))
        .route("/metrics", get(metrics))
        .with_state(platform)
}

type P = State<Arc<Platform>>;

async fn deploy(State(p): P, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let text = utf8(&body)?.to_string();
    let format = if is_json(&headers) { PackageFormat::Json } else { PackageFormat::Yaml };
    let result = blocking(move || Ok(p.deploy_text(&text, format))).await?;
    match result {
        Ok(report) => Ok(Json(report).into_response()),
        Err(PlatformError::Invalid(report)) => Ok((StatusCode::UNPROCESSABLE_ENTITY, Json(report)).into_response()),
        Err(e) => Err(e.into()),
    }
}

async fn list_classes(State(p): P) -> Json<Value> {
    Json(json!(p.classes().definitions()))
}

async fn get_class(State(p): P, Path(name): Path<String>) -> ApiResult<Response> {
    let info = p
        .class_info(&name)
        .ok_or_else(|| ApiError::from(StoreError::UnknownClass(name)))?;
    Ok(Json(info).into_response())
}

async fn create_object(State(p): P, Path(cls): Path<String>, body: Bytes) -> ApiResult<Response> {
    let state: StateDocument = match json_body(&body)? {
        None => StateDocument::new(),
        Some(Value::Object(m)) => m,
        Some(_) => return Err(ApiError::bad_request("BadRequest", "initial state must be a JSON object")),
    };
    let record = blocking(move || Ok(p.create_object(&cls, state)?)).await?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn get_object(State(p): P, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(p.get_object(&ObjectId::from(id))?).into_response())
}

fn payload(headers: &HeaderMap, body: Bytes) -> ApiResult<Payload> {
    if is_bytes(headers) {
        return Ok(Payload::Bytes(body.to_vec()));
    }
    Ok(json_body(&body)?.map(Payload::Json).unwrap_or_default())
}

async fn invoke(
    State(p): P,
    Path((id, func)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let payload = payload(&headers, body)?;
    let resp = p.invoke(&ObjectId::from(id), &func, payload).await?;
    Ok(Json(resp).into_response())
}

async fn invoke_async(
    State(p): P,
    Path((id, func)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let payload = payload(&headers, body)?;
    let id = ObjectId::from(id);
    // Fail fast on a missing object rather than in the background.
    p.get_object(&id)?;
    let task_id = p.invoke_async(id, func, payload);
    Ok((StatusCode::ACCEPTED, Json(json!({ "taskId": task_id }))).into_response())
}

async fn task_status(State(p): P, Path(task_id): Path<String>) -> ApiResult<Response> {
    let status = p
        .task_status(&task_id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownTask", format!("task {task_id} not found")))?;
    Ok(Json(status).into_response())
}

fn octets(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response()
}

async fn get_blob(State(p): P, Path((id, key)): Path<(String, String)>, Query(q): Query<BlobQuery>) -> ApiResult<Response> {
    let bytes = blocking(move || Ok(p.read_blob(&id, &key, &q)?)).await?;
    Ok(octets(bytes))
}

async fn put_blob(
    State(p): P,
    Path((id, key)): Path<(String, String)>,
    Query(q): Query<BlobQuery>,
    body: Bytes,
) -> ApiResult<StatusCode> {
    blocking(move || Ok(p.write_blob(&id, &key, &q, &body)?)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn get_blob_direct(State(p): P, Path((id, key)): Path<(String, String)>) -> ApiResult<Response> {
    let bytes = blocking(move || Ok(p.store().get_blob(&ObjectId::from(id), &key)?)).await?;
    Ok(octets(bytes))
}

async fn put_blob_direct(State(p): P, Path((id, key)): Path<(String, String)>, body: Bytes) -> ApiResult<StatusCode> {
    blocking(move || Ok(p.store().put_blob(&ObjectId::from(id), &key, &body)?)).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct PresignParams {
    mode: Option<String>,
}

async fn presign(
    State(p): P,
    Path((id, key)): Path<(String, String)>,
    Query(params): Query<PresignParams>,
) -> ApiResult<Response> {
    let mode: BlobMode = params
        .mode
        .as_deref()
        .unwrap_or("GET")
        .parse()
        .map_err(|_| ApiError::bad_request("BadRequest", "mode must be GET or PUT"))?;
    let url = p.presign(&ObjectId::from(id), &key, mode)?;
    Ok(Json(json!({
        "url": url.to_url(&p.config().engine.public_url),
        "path": url.path_and_query(),
        "expires": url.expires,
    }))
    .into_response())
}

async fn runtimes(State(p): P) -> Json<Value> {
    Json(json!(p.runtimes().runtimes()))
}

async fn add_template(State(p): P, body: Bytes) -> ApiResult<Response> {
    let t = TemplateSpec::parse(utf8(&body)?)?;
    let rts = blocking(move || Ok(p.register_template(t)?)).await?;
    Ok(Json(rts).into_response())
}

async fn metrics(State(p): P) -> Response {
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], p.metrics_text()).into_response()
}

/// Serves until `shutdown` resolves, then flushes the cache.
pub async fn serve(
    platform: Arc<Platform>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    axum::serve(listener, router(platform.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    tokio::task::spawn_blocking(move || platform.shutdown()).await??;
    Ok(())
}
