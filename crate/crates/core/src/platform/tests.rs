use serde_json::json;

use super::*;
use crate::class::fixtures::LISTING_1;
use crate::runtime::TemplateConfig;

fn doc(v: serde_json::Value) -> StateDocument {
    v.as_object().unwrap().clone()
}

fn disk_config(dir: &Path) -> PlatformConfig {
    PlatformConfig {
        data_dir: Some(dir.to_path_buf()),
        fsync: false,
        ..PlatformConfig::default()
    }
}

const COUNTER: &str = r#"
classes:
  - name: Counter
    constraint: {persistent: true, budget: 10}
    functions:
      - name: inc
        endpoint: local://inc
      - name: twice
        kind: macro
        dataflow:
          steps:
            - {alias: a, use: inc}
            - {alias: b, use: inc, args: {after: $a}}
          output: b
"#;

#[test]
fn deploys_listing_with_builtin_templates() {
    let p = Platform::open(PlatformConfig::default()).unwrap();
    let report = p.deploy_text(LISTING_1, PackageFormat::Yaml).unwrap();
    assert_eq!(report.classes_deployed, 2);
    assert_eq!(report.classes["Image"].template_selected, "persistent-throughput");
    assert_eq!(report.classes["LabelledImage"].template_selected, "persistent-throughput");
    assert_eq!(
        p.dht().policy("LabelledImage").mode,
        PersistenceMode::WriteBehind
    );
    let info = p.class_info("LabelledImage").unwrap();
    assert_eq!(info.resolved.ancestry, vec!["Image".to_string()]);
    assert!(info.resolved.effective_functions.contains_key("resize"));
    assert!(info.runtime.is_some());
}

#[test]
fn inert_constraints_are_reported() {
    let p = Platform::open(PlatformConfig::default()).unwrap();
    let report = p.deploy_text(COUNTER, PackageFormat::Yaml).unwrap();
    let w = &report.classes["Counter"].warnings;
    assert!(w.iter().any(|m| m.contains("budget")), "{w:?}");
}

#[test]
fn bad_dataflow_rejects_whole_package() {
    let p = Platform::open(PlatformConfig::default()).unwrap();
    let bad = r#"
classes:
  - name: Fine
    functions:
      - {name: f, endpoint: local://echo}
  - name: Broken
    functions:
      - name: m
        kind: macro
        dataflow:
          steps:
            - {alias: a, use: missing}
          output: a
"#;
    let Err(PlatformError::Invalid(report)) = p.deploy_text(bad, PackageFormat::Yaml) else {
        panic!("expected rejection");
    };
    assert!(report.errors.iter().any(|d| d.kind == DiagnosticKind::InvalidDataflow));
    assert!(p.classes().definitions().is_empty());
    assert!(p.runtimes().runtimes().is_empty());
}

#[test]
fn unknown_parent_rejected() {
    let p = Platform::open(PlatformConfig::default()).unwrap();
    let pkg = "classes:\n  - {name: A, parent: Nope}\n";
    let Err(PlatformError::Invalid(report)) = p.deploy_text(pkg, PackageFormat::Yaml) else {
        panic!("expected rejection");
    };
    assert_eq!(report.errors[0].kind, DiagnosticKind::UnresolvedParent);
}

#[test]
fn later_package_extends_deployed_parent() {
    let p = Platform::open(PlatformConfig::default()).unwrap();
    p.deploy_text(LISTING_1, PackageFormat::Yaml).unwrap();
    let child = r#"
classes:
  - name: Thumb
    parent: LabelledImage
    functions:
      - {name: resize, endpoint: local://echo}
"#;
    let report = p.deploy_text(child, PackageFormat::Yaml).unwrap();
    assert_eq!(report.classes.keys().collect::<Vec<_>>(), ["Thumb"]);
    let rc = p.classes().resolved_class("Thumb").unwrap();
    assert_eq!(rc.effective_functions["resize"].endpoint.as_deref(), Some("local://echo"));
    assert_eq!(rc.function_origin["changeFormat"], "Image");
}

#[test]
fn unmapped_image_is_a_warning() {
    let p = Platform::open(PlatformConfig::default()).unwrap();
    let pkg = "classes:\n  - name: A\n    functions:\n      - {name: f, image: img/elsewhere}\n";
    let report = p.deploy_text(pkg, PackageFormat::Yaml).unwrap();
    assert!(report.classes["A"].warnings.iter().any(|w| w.contains("no runtime")));
}

#[tokio::test]
async fn invoke_through_platform() {
    let p = Platform::open(PlatformConfig::default()).unwrap();
    p.deploy_text(COUNTER, PackageFormat::Yaml).unwrap();
    let obj = p.create_object("Counter", doc(json!({"n": 0}))).unwrap();
    let r = p.invoke(&obj.id, "inc", Payload::Json(json!({"by": 3}))).await.unwrap();
    assert_eq!(r.output, json!({"n": 3}));
    let r = p.invoke(&obj.id, "twice", Payload::default()).await.unwrap();
    assert_eq!(r.output, json!({"n": 5}));
    assert_eq!(p.get_object(&obj.id).unwrap().version, 3);
    let text = p.metrics_text();
    assert!(text.lines().any(|l| l == "invocations_total 2"), "{text}");
    assert!(text.lines().any(|l| l == "commits 3"));
    assert!(text.contains("class_replicas{class=\"Counter\"}"));
}

#[tokio::test]
async fn catalog_objects_and_secret_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (id, url) = {
        let p = Platform::open(disk_config(dir.path())).unwrap();
        p.deploy_text(LISTING_1, PackageFormat::Yaml).unwrap();
        let obj = p.create_object("Image", doc(json!({"w": 640}))).unwrap();
        p.store().put_blob(&obj.id, "image", b"abcdef").unwrap();
        let r = p.invoke(&obj.id, "resize", Payload::default()).await.unwrap();
        assert_eq!(r.object_version_after, 1);
        let url = p.presign(&obj.id, "image", BlobMode::Get).unwrap();
        p.shutdown().unwrap();
        (obj.id, url)
    };
    let p = Platform::open(disk_config(dir.path())).unwrap();
    assert_eq!(p.classes().definitions().len(), 2);
    assert_eq!(p.runtimes().runtimes().len(), 2);
    let obj = p.get_object(&id).unwrap();
    assert_eq!((obj.version, obj.state.clone()), (1, doc(json!({"w": 640}))));
    assert!(obj.blob_keys.contains("image"));
    let q = url.query();
    assert_eq!(p.read_blob(id.as_str(), "image", &q).unwrap(), b"ace");
}

#[test]
fn new_template_reselects_deployed_classes() {
    let p = Platform::open(PlatformConfig::default()).unwrap();
    p.deploy_text(LISTING_1, PackageFormat::Yaml).unwrap();
    let t = TemplateSpec::new(
        "hot-images",
        50,
        &["throughput >= 80"],
        TemplateConfig {
            max_replicas: 16,
            ..TemplateConfig::default()
        },
    );
    let rts = p.register_template(t).unwrap();
    assert!(rts.iter().all(|r| r.template_name == "hot-images"));
}

#[test]
fn default_persistence_override() {
    let p = Platform::open(PlatformConfig {
        default_persistence: Some(PersistenceMode::MemoryOnly),
        ..PlatformConfig::default()
    })
    .unwrap();
    p.deploy_text(COUNTER.replace("persistent: true, ", "").as_str(), PackageFormat::Yaml)
        .unwrap();
    assert_eq!(p.dht().policy("Counter").mode, PersistenceMode::MemoryOnly);
}
