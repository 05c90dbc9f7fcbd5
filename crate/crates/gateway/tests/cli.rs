mod common;

use std::path::Path;

use common::{Server, LISTING};
use oaas_core::platform::PlatformConfig;
use serde_json::Value;

struct Run {
    code: i32,
    stdout: Vec<u8>,
    stderr: String,
}

async fn oaas(server: &Server, args: &[&str]) -> Run {
    let out = tokio::process::Command::new(env!("CARGO_BIN_EXE_oaas"))
        .arg("--server")
        .arg(&server.base)
        .args(args)
        .output()
        .await
        .unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: out.stdout,
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn json(r: &Run) -> Value {
    assert_eq!(r.code, 0, "{}", r.stderr);
    serde_json::from_slice(&r.stdout).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn tutorial_through_the_cli() {
    let s = Server::start(PlatformConfig::default()).await;
    let dir = tempfile::tempdir().unwrap();
    let pkg = dir.path().join("listing1.yaml");
    let img = dir.path().join("cat.png");
    let out = dir.path().join("resized.png");
    std::fs::write(&pkg, LISTING).unwrap();
    std::fs::write(&img, b"\x89PNG-cat-bytes").unwrap();

    let r = oaas(&s, &["deploy", path_str(&pkg)]).await;
    assert_eq!(r.code, 0, "{}", r.stderr);
    let text = String::from_utf8(r.stdout).unwrap();
    assert!(text.contains("deployed 2 class(es)"), "{text}");
    assert!(text.contains("Image -> persistent-throughput"), "{text}");

    let created = json(&oaas(&s, &["--output", "json", "object", "create", "Image"]).await);
    let id = created["id"].as_str().unwrap().to_string();
    assert_eq!(oaas(&s, &["blob", "put", &id, "image", path_str(&img)]).await.code, 0);
    let resp = json(&oaas(&s, &["--output", "json", "invoke", &id, "resize"]).await);
    assert_eq!(resp["objectVersionAfter"], 1);
    assert_eq!(oaas(&s, &["blob", "get", &id, "image", path_str(&out)]).await.code, 0);
    assert_eq!(std::fs::read(&out).unwrap(), b"\x89N-a-ye");
    let obj = json(&oaas(&s, &["--output", "json", "object", "get", &id]).await);
    assert_eq!(obj["version"], 1);

    let r = oaas(&s, &["runtime", "list"]).await;
    assert!(String::from_utf8(r.stdout).unwrap().contains("persistent-throughput"));
    let r = oaas(&s, &["metrics"]).await;
    assert!(String::from_utf8(r.stdout).unwrap().contains("store_write_calls "));
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn failures_exit_nonzero_with_error_line() {
    let s = Server::start(PlatformConfig::default()).await;
    let dir = tempfile::tempdir().unwrap();
    let pkg = dir.path().join("listing1.yaml");
    std::fs::write(&pkg, LISTING).unwrap();
    assert_eq!(oaas(&s, &["deploy", path_str(&pkg)]).await.code, 0);

    let r = oaas(&s, &["invoke", "missing-id", "resize"]).await;
    assert_eq!(r.code, 1);
    assert!(r.stderr.starts_with("error: NotFound: "), "{}", r.stderr);

    let bad = dir.path().join("bad.yaml");
    std::fs::write(&bad, "classes:\n  - {name: X, parent: Ghost}\n").unwrap();
    let r = oaas(&s, &["deploy", path_str(&bad)]).await;
    assert_eq!(r.code, 1);
    assert!(r.stderr.starts_with("error: ValidationFailed: "), "{}", r.stderr);

    let r = oaas(&s, &["deploy", "/no/such/file.yaml"]).await;
    assert_eq!(r.code, 1);
    assert!(r.stderr.starts_with("error: BadInput: "), "{}", r.stderr);
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn unreachable_server() {
    let out = tokio::process::Command::new(env!("CARGO_BIN_EXE_oaas"))
        .args(["--server", "http://127.0.0.1:1", "class", "list"])
        .output()
        .await
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: Unreachable: "));
}

#[tokio::test(flavor = "multi_thread")]
async fn json_output_matches_http_bytes() {
    let s = Server::start(PlatformConfig::default()).await;
    let dir = tempfile::tempdir().unwrap();
    let pkg = dir.path().join("listing1.json");
    std::fs::write(&pkg, listing_json().to_string()).unwrap();
    assert_eq!(oaas(&s, &["deploy", path_str(&pkg)]).await.code, 0);
    let id = json(&oaas(&s, &["--output", "json", "object", "create", "Image"]).await)["id"]
        .as_str()
        .unwrap()
        .to_string();

    let http = reqwest::Client::new();
    for (args, path) in [
        (vec!["class", "list"], "/classes".to_string()),
        (vec!["class", "get", "LabelledImage"], "/classes/LabelledImage".to_string()),
        (vec!["object", "get", id.as_str()], format!("/objects/{id}")),
    ] {
        let mut full = vec!["--output", "json"];
        full.extend(args);
        let cli = oaas(&s, &full).await;
        let direct = http.get(s.url(&path)).send().await.unwrap().bytes().await.unwrap();
        assert_eq!(cli.stdout, direct.as_ref(), "{path}");
    }
    s.stop().await;
}

fn listing_json() -> Value {
    serde_json::json!({
        "classes": [
            {
                "name": "Image",
                "qos": {"throughput": 100},
                "constraint": {"persistent": true},
                "keySpecs": [{"name": "image"}],
                "functions": [
                    {"name": "resize", "image": "img/resize"},
                    {"name": "changeFormat", "image": "img/change-format"}
                ]
            },
            {
                "name": "LabelledImage",
                "parent": "Image",
                "functions": [{"name": "detectObject", "image": "img/detect-object"}]
            }
        ]
    })
}
