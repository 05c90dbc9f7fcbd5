mod common;

use std::time::Duration;

use common::{Server, COUNTER, LISTING};
use oaas_core::platform::PlatformConfig;
use oaas_core::store::PersistenceMode;
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

async fn deploy(c: &Client, s: &Server, pkg: &str) -> Value {
    let r = c.post(s.url("/classes")).body(pkg.to_string()).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    r.json().await.unwrap()
}

async fn create(c: &Client, s: &Server, cls: &str, state: Value) -> String {
    let r = c
        .post(s.url(&format!("/classes/{cls}/objects")))
        .json(&state)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::CREATED);
    let v: Value = r.json().await.unwrap();
    v["id"].as_str().unwrap().to_string()
}

async fn error_of(r: reqwest::Response) -> (StatusCode, String) {
    let status = r.status();
    let v: Value = r.json().await.unwrap();
    (status, v["error"]["code"].as_str().unwrap_or_default().to_string())
}

#[tokio::test]
async fn tutorial_flow() {
    let s = Server::start(PlatformConfig::default()).await;
    let c = Client::new();
    let report = deploy(&c, &s, LISTING).await;
    assert_eq!(report["classesDeployed"], 2);
    assert_eq!(report["classes"]["Image"]["templateSelected"], "persistent-throughput");

    let id = create(&c, &s, "Image", json!({})).await;
    let r = c
        .put(s.url(&format!("/objects/{id}/blobs/image")))
        .body(b"0123456789".to_vec())
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::NO_CONTENT);

    let r = c.post(s.url(&format!("/objects/{id}/invoke/resize"))).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let v: Value = r.json().await.unwrap();
    assert_eq!(v["objectVersionAfter"], 1);

    let blob = c.get(s.url(&format!("/objects/{id}/blobs/image"))).send().await.unwrap();
    assert_eq!(blob.bytes().await.unwrap().as_ref(), b"02468");
    let obj: Value = c.get(s.url(&format!("/objects/{id}"))).send().await.unwrap().json().await.unwrap();
    assert_eq!(obj["version"], 1);

    let classes: Value = c.get(s.url("/classes")).send().await.unwrap().json().await.unwrap();
    assert_eq!(classes.as_array().unwrap().len(), 2);
    let info: Value = c.get(s.url("/classes/LabelledImage")).send().await.unwrap().json().await.unwrap();
    assert_eq!(info["resolved"]["ancestry"], json!(["Image"]));
    s.stop().await;
}

#[tokio::test]
async fn error_statuses() {
    let s = Server::start(PlatformConfig::default()).await;
    let c = Client::new();
    deploy(&c, &s, COUNTER).await;
    let id = create(&c, &s, "Counter", json!({"n": 0})).await;

    let r = c.post(s.url("/objects/nope/invoke/inc")).send().await.unwrap();
    assert_eq!(error_of(r).await, (StatusCode::NOT_FOUND, "NotFound".into()));
    let r = c.post(s.url(&format!("/objects/{id}/invoke/missing"))).send().await.unwrap();
    assert_eq!(error_of(r).await, (StatusCode::NOT_FOUND, "UnknownFunction".into()));
    let r = c.post(s.url("/classes/Nope/objects")).send().await.unwrap();
    assert_eq!(error_of(r).await, (StatusCode::NOT_FOUND, "UnknownClass".into()));
    let r = c.get(s.url("/classes/Nope")).send().await.unwrap();
    assert_eq!(error_of(r).await, (StatusCode::NOT_FOUND, "UnknownClass".into()));
    let r = c.post(s.url(&format!("/objects/{id}/invoke/down"))).send().await.unwrap();
    assert_eq!(error_of(r).await, (StatusCode::BAD_GATEWAY, "RuntimeUnreachable".into()));
    let r = c.get(s.url("/tasks/unknown")).send().await.unwrap();
    assert_eq!(error_of(r).await, (StatusCode::NOT_FOUND, "UnknownTask".into()));
    let r = c.post(s.url("/classes")).body("classes: [").send().await.unwrap();
    assert_eq!(error_of(r).await, (StatusCode::BAD_REQUEST, "InvalidPackage".into()));

    let r = c
        .post(s.url("/classes"))
        .body("classes:\n  - {name: A, parent: Nope}\n")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let report: Value = r.json().await.unwrap();
    assert_eq!(report["errors"][0]["kind"], "unresolvedParent");

    let obj: Value = c.get(s.url(&format!("/objects/{id}"))).send().await.unwrap().json().await.unwrap();
    assert_eq!((obj["version"].clone(), obj["state"].clone()), (json!(0), json!({"n": 0})));
    s.stop().await;
}

#[tokio::test]
async fn timeout_maps_to_504() {
    let mut cfg = PlatformConfig::default();
    cfg.engine.deadline_ms = 100;
    let s = Server::start(cfg).await;
    let c = Client::new();
    deploy(&c, &s, COUNTER).await;
    let id = create(&c, &s, "Counter", json!({})).await;
    let r = c
        .post(s.url(&format!("/objects/{id}/invoke/sleep")))
        .json(&json!({"ms": 1000}))
        .send()
        .await
        .unwrap();
    assert_eq!(error_of(r).await, (StatusCode::GATEWAY_TIMEOUT, "RuntimeTimeout".into()));
    s.stop().await;
}

#[tokio::test]
async fn saturated_class_gets_429() {
    let s = Server::start(PlatformConfig::default()).await;
    let c = Client::new();
    deploy(&c, &s, COUNTER).await;
    let tpl = r#"
name: single-slot
priority: 100
match: ["throughput >= 1"]
config: {initialReplicas: 1, maxReplicas: 1, concurrencyPerReplica: 1, queueTimeoutMs: 50}
"#;
    let r = c.post(s.url("/templates")).body(tpl).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let rts: Value = r.json().await.unwrap();
    assert_eq!(rts[0]["templateName"], "single-slot");

    let id = create(&c, &s, "Counter", json!({})).await;
    let slow = {
        let (c, url) = (c.clone(), s.url(&format!("/objects/{id}/invoke/sleep")));
        tokio::spawn(async move { c.post(url).json(&json!({"ms": 400})).send().await.unwrap().status() })
    };
    tokio::time::sleep(Duration::from_millis(100)).await;
    let r = c.post(s.url(&format!("/objects/{id}/invoke/inc"))).send().await.unwrap();
    assert!(r.headers().get("retry-after").is_some());
    assert_eq!(error_of(r).await, (StatusCode::TOO_MANY_REQUESTS, "Saturated".into()));
    assert_eq!(slow.await.unwrap(), StatusCode::OK);

    let r = c.post(s.url("/templates")).body("name: clash\npriority: 100\n").send().await.unwrap();
    assert_eq!(error_of(r).await, (StatusCode::CONFLICT, "DuplicatePriority".into()));
    s.stop().await;
}

#[tokio::test]
async fn async_invocation_and_metrics() {
    let s = Server::start(PlatformConfig::default()).await;
    let c = Client::new();
    deploy(&c, &s, COUNTER).await;
    let id = create(&c, &s, "Counter", json!({"n": 1})).await;
    let r = c.post(s.url(&format!("/objects/{id}/invoke-async/twice"))).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::ACCEPTED);
    let task: Value = r.json().await.unwrap();
    let path = format!("/tasks/{}", task["taskId"].as_str().unwrap());
    let mut status = Value::Null;
    for _ in 0..100 {
        status = c.get(s.url(&path)).send().await.unwrap().json().await.unwrap();
        if status["status"] != "PENDING" {
            break;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    assert_eq!(status["status"], "OK");
    assert_eq!(status["response"]["output"], json!({"n": 3}));

    let r = c.post(s.url("/objects/ghost/invoke-async/inc")).send().await.unwrap();
    assert_eq!(error_of(r).await, (StatusCode::NOT_FOUND, "NotFound".into()));

    let r = c.get(s.url("/metrics")).send().await.unwrap();
    assert!(r.headers()["content-type"].to_str().unwrap().starts_with("text/plain"));
    let text = r.text().await.unwrap();
    for name in ["cache_hits", "cache_misses", "store_write_calls", "dirty_entries", "remapped_keys"] {
        let line = text.lines().find(|l| l.split(' ').next() == Some(name)).unwrap();
        line.split(' ').nth(1).unwrap().parse::<u64>().unwrap();
    }
    s.stop().await;
}

#[tokio::test]
async fn presigned_blob_surface() {
    let s = Server::start(PlatformConfig::default()).await;
    let c = Client::new();
    deploy(&c, &s, LISTING).await;
    let id = create(&c, &s, "Image", json!({})).await;
    let presign = |mode: &str| {
        let (c, url) = (c.clone(), s.url(&format!("/objects/{id}/blobs/image/presign?mode={mode}")));
        async move { c.get(url).send().await.unwrap().json::<Value>().await.unwrap() }
    };
    let get = presign("GET").await;
    let get_url = get["url"].as_str().unwrap().to_string();
    assert!(get_url.starts_with(&s.base));
    let r = c.get(&get_url).send().await.unwrap();
    assert_eq!(error_of(r).await, (StatusCode::NOT_FOUND, "BlobNotFound".into()));

    let put_url = presign("PUT").await["url"].as_str().unwrap().to_string();
    let r = c.put(&put_url).body("pixels").send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NO_CONTENT);
    let r = c.get(&get_url).send().await.unwrap();
    assert_eq!(r.bytes().await.unwrap().as_ref(), b"pixels");

    // A GET signature does not authorize a PUT, and a flipped signature fails.
    let r = c.put(get_url.replace("mode=GET", "mode=PUT")).body("x").send().await.unwrap();
    assert_eq!(error_of(r).await, (StatusCode::FORBIDDEN, "Forbidden".into()));
    let flipped = {
        let (head, sig) = get_url.rsplit_once("sig=").unwrap();
        let first = if sig.starts_with('0') { '1' } else { '0' };
        format!("{head}sig={first}{}", &sig[1..])
    };
    let r = c.get(flipped).send().await.unwrap();
    assert_eq!(error_of(r).await, (StatusCode::FORBIDDEN, "Forbidden".into()));
    let r = c.get(s.url(&format!("/blobs/{id}/image"))).send().await.unwrap();
    assert_eq!(error_of(r).await, (StatusCode::FORBIDDEN, "Forbidden".into()));

    let r = c.get(s.url(&format!("/objects/{id}/blobs/thumb/presign"))).send().await.unwrap();
    assert_eq!(error_of(r).await, (StatusCode::NOT_FOUND, "UnknownKey".into()));
    s.stop().await;
}

async fn restart_keeps_state(mode: PersistenceMode) {
    let dir = tempfile::tempdir().unwrap();
    let config = || PlatformConfig {
        data_dir: Some(dir.path().to_path_buf()),
        fsync: false,
        default_persistence: Some(mode),
        ..PlatformConfig::default()
    };
    let c = Client::new();
    let s = Server::start(config()).await;
    deploy(&c, &s, COUNTER).await;
    let id = create(&c, &s, "Counter", json!({"n": 0})).await;
    for _ in 0..7 {
        let r = c.post(s.url(&format!("/objects/{id}/invoke/inc"))).send().await.unwrap();
        assert_eq!(r.status(), StatusCode::OK);
    }
    s.stop().await;

    let s = Server::start(config()).await;
    let obj: Value = c.get(s.url(&format!("/objects/{id}"))).send().await.unwrap().json().await.unwrap();
    assert_eq!((obj["version"].clone(), obj["state"]["n"].clone()), (json!(7), json!(7)), "{mode:?}");
    let r = c.post(s.url(&format!("/objects/{id}/invoke/inc"))).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    s.stop().await;
}

#[tokio::test]
async fn restart_keeps_write_through_state() {
    restart_keeps_state(PersistenceMode::WriteThrough).await;
}

#[tokio::test]
async fn restart_keeps_write_behind_state() {
    restart_keeps_state(PersistenceMode::WriteBehind).await;
}
