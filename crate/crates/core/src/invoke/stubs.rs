//! In-process sample functions, registered under `local://{name}`.
//!
//! | name            | effect                                                        |
//! |-----------------|---------------------------------------------------------------|
//! | `inc`           | `state.n += payload.by` (default 1); output `{"n": n}`        |
//! | `json-random`   | bumps `state.iteration`, fills `payload.fields` seeded fields |
//! | `sleep-ms`      | sleeps `payload.ms`, echoes the payload, state untouched      |
//! | `echo`          | output = payload, state untouched                             |
//! | `resize`        | halves the bytes of blob `payload.key` (default `image`)      |
//! | `change-format` | sets `state.format` from `payload.format`                     |
//! | `detect-object` | writes a fixed label list into `state.labels`                 |

use std::time::Duration;

use futures::FutureExt;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

use super::runtime::LocalRuntimes;
use super::wire::{InvocationTask, TaskResult};
use crate::dht::hash64;

pub const SAMPLE_LABELS: [&str; 2] = ["cat", "sofa"];

fn arg<'a>(task: &'a InvocationTask, name: &str) -> Option<&'a Value> {
    task.payload.as_json().and_then(|p| p.get(name))
}

pub fn inc(task: &InvocationTask) -> TaskResult {
    let by = arg(task, "by").and_then(Value::as_i64).unwrap_or(1);
    let n = task.state.get("n").and_then(Value::as_i64).unwrap_or(0) + by;
    let mut state = task.state.clone();
    state.insert("n".into(), json!(n));
    TaskResult::ok(task, json!({ "n": n }), state)
}

/// Deterministic in `(state.iteration, payload.seed, payload.fields)`.
pub fn json_random(task: &InvocationTask) -> TaskResult {
    let fields = arg(task, "fields").and_then(Value::as_u64).unwrap_or(10) as usize;
    let seed = arg(task, "seed").and_then(Value::as_u64).unwrap_or(0);
    let iteration = task.state.get("iteration").and_then(Value::as_u64).unwrap_or(0) + 1;
    let mut rng = rand::rngs::StdRng::seed_from_u64(hash64(seed, &iteration.to_le_bytes()));
    let mut state = task.state.clone();
    state.insert("iteration".into(), json!(iteration));
    for i in 0..fields {
        state.insert(format!("f{i}"), json!(rng.gen::<u32>()));
    }
    TaskResult::ok(task, json!({ "iteration": iteration }), state)
}

pub fn echo(task: &InvocationTask) -> TaskResult {
    let output = task.payload.as_json().cloned().unwrap_or(Value::Null);
    TaskResult::ok(task, output, task.state.clone())
}

pub fn change_format(task: &InvocationTask) -> TaskResult {
    let format = arg(task, "format").and_then(Value::as_str).unwrap_or("png");
    let mut state = task.state.clone();
    state.insert("format".into(), json!(format));
    TaskResult::ok(task, json!({ "format": format }), state)
}

pub fn detect_object(task: &InvocationTask) -> TaskResult {
    let mut state = task.state.clone();
    state.insert("labels".into(), json!(SAMPLE_LABELS));
    TaskResult::ok(task, json!({ "labels": SAMPLE_LABELS }), state)
}

/// Every other byte of the input, so the result is half the size.
pub fn downscale(bytes: &[u8]) -> Vec<u8> {
    bytes.iter().step_by(2).copied().collect()
}

/// Registers every sample under its table name.
pub fn register_samples(local: &LocalRuntimes) {
    local.register_fn("inc", |t, _| inc(t));
    local.register_fn("json-random", |t, _| json_random(t));
    local.register_fn("echo", |t, _| echo(t));
    local.register_fn("change-format", |t, _| change_format(t));
    local.register_fn("detect-object", |t, _| detect_object(t));
    local.register_fn("resize", |t, ctx| {
        let key = arg(t, "key").and_then(Value::as_str).unwrap_or("image");
        let Some(urls) = t.blobs.get(key) else {
            return TaskResult::error(t, "NO_SUCH_KEY", format!("no blob urls for {key}"));
        };
        let (Some(get), Some(put)) = (&urls.get_url, &urls.put_url) else {
            return TaskResult::error(t, "BLOB_MISSING", format!("blob {key} not stored"));
        };
        let resized = match ctx.get_blob(get) {
            Ok(bytes) => downscale(&bytes),
            Err(e) => return TaskResult::error(t, "BLOB_READ", e.to_string()),
        };
        if let Err(e) = ctx.put_blob(put, &resized) {
            return TaskResult::error(t, "BLOB_WRITE", e.to_string());
        }
        TaskResult::ok(t, json!({ "key": key, "bytes": resized.len() }), t.state.clone()).with_blobs_written([key])
    });
    local.register(
        "sleep-ms",
        std::sync::Arc::new(|task, _| {
            async move {
                let ms = arg(&task, "ms").and_then(Value::as_u64).unwrap_or(0);
                tokio::time::sleep(Duration::from_millis(ms)).await;
                Ok(echo(&task))
            }
            .boxed()
        }),
    );
}
