use std::collections::HashMap;
use std::thread;

use parking_lot::RwLock;
use serde_json::json;

use super::*;
use crate::class::{fixtures::listing_one, resolve_inheritance, ClassDefinition, ClassPackage};
use crate::dht::{DhtConfig, PersistencePolicy};

struct Fixture {
    store: StateStore,
    durable: Arc<MemoryStore>,
    _blobs: tempfile::TempDir,
}

fn fixture(counter_mode: PersistenceMode) -> Fixture {
    let mut pkg = listing_one();
    pkg.classes.push(ClassDefinition::new("Counter"));
    let mut classes = HashMap::new();
    for c in &pkg.classes {
        let rc = resolve_inheritance(&c.name, &pkg).unwrap();
        classes.insert(c.name.clone(), Arc::new(rc));
    }
    let durable = Arc::new(MemoryStore::new());
    let dht = Arc::new(Dht::new(DhtConfig::default(), durable.clone()));
    dht.set_policy(
        "Counter",
        PersistencePolicy {
            mode: counter_mode,
            ..Default::default()
        },
    );
    let dir = tempfile::tempdir().unwrap();
    let store = StateStore::new(
        dht,
        BlobStore::new(dir.path()).unwrap(),
        Presigner::new("test-secret"),
        Arc::new(RwLock::new(classes)),
    );
    Fixture {
        store,
        durable,
        _blobs: dir,
    }
}

fn doc(v: serde_json::Value) -> StateDocument {
    v.as_object().unwrap().clone()
}

fn increment(store: &StateStore, id: &ObjectId) -> u32 {
    let mut attempts = 0;
    loop {
        attempts += 1;
        let rec = store.get_object(id).unwrap();
        let n = rec.state.get("n").and_then(|v| v.as_u64()).unwrap_or(0);
        let token = store.begin_transition(id, rec.version).unwrap();
        match store.commit_transition(&token, doc(json!({ "n": n + 1 }))) {
            Ok(_) => return attempts,
            Err(StoreError::VersionConflict { .. }) => thread::yield_now(),
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn create_objects() {
    let f = fixture(PersistenceMode::WriteThrough);
    let image = f.store.create_object("Image", StateDocument::new()).unwrap();
    assert_eq!(image.version, 0);
    assert!(image.blob_keys.is_empty());
    let labelled = f
        .store
        .create_object("LabelledImage", doc(json!({"labels": []})))
        .unwrap();
    assert_eq!(labelled.cls, "LabelledImage");
    assert_eq!(f.store.get_object(&labelled.id).unwrap().state, doc(json!({"labels": []})));
    assert_eq!(
        f.store.create_object("Ghost", StateDocument::new()),
        Err(StoreError::UnknownClass("Ghost".into()))
    );
    assert!(matches!(
        f.store
            .create_object_with_id(image.id.clone(), "Image", StateDocument::new()),
        Err(StoreError::AlreadyExists(_))
    ));
}

#[test]
fn get_unknown_is_not_found() {
    let f = fixture(PersistenceMode::WriteThrough);
    assert_eq!(
        f.store.get_object(&"nope".into()),
        Err(StoreError::NotFound("nope".into()))
    );
}

#[test]
fn versions_count_commits() {
    let f = fixture(PersistenceMode::WriteThrough);
    let id = f.store.create_object("Counter", StateDocument::new()).unwrap().id;
    for expected in 0..3 {
        let token = f.store.begin_transition(&id, expected).unwrap();
        let rec = f.store.commit_transition(&token, doc(json!({"n": expected + 1}))).unwrap();
        assert_eq!(rec.version, expected + 1);
    }
    assert_eq!(f.store.get_object(&id).unwrap().version, 3);
}

#[test]
fn second_token_conflicts() {
    let f = fixture(PersistenceMode::WriteThrough);
    let id = f.store.create_object("Counter", StateDocument::new()).unwrap().id;
    let t1 = f.store.begin_transition(&id, 0).unwrap();
    let t2 = f.store.begin_transition(&id, 0).unwrap();
    assert_eq!(f.store.commit_transition(&t1, doc(json!({"n": 1}))).unwrap().version, 1);
    assert_eq!(
        f.store.commit_transition(&t2, doc(json!({"n": 99}))),
        Err(StoreError::VersionConflict { current: 1 })
    );
    assert_eq!(f.store.get_object(&id).unwrap().state, doc(json!({"n": 1})));
    assert_eq!(
        f.store.commit_transition(&t1, doc(json!({"n": 2}))),
        Err(StoreError::TokenReused)
    );
}

#[test]
fn abort_burns_the_token() {
    let f = fixture(PersistenceMode::WriteThrough);
    let id = f.store.create_object("Counter", doc(json!({"n": 5}))).unwrap().id;
    let t = f.store.begin_transition(&id, 0).unwrap();
    f.store.abort_transition(&t);
    assert_eq!(
        f.store.commit_transition(&t, doc(json!({"n": 6}))),
        Err(StoreError::TokenReused)
    );
    let rec = f.store.get_object(&id).unwrap();
    assert_eq!((rec.version, rec.state), (0, doc(json!({"n": 5}))));
    assert_eq!(f.store.tokens().open_count(), 0);
}

#[test]
fn begin_on_missing_object() {
    let f = fixture(PersistenceMode::WriteThrough);
    assert!(matches!(
        f.store.begin_transition(&"ghost".into(), 0),
        Err(StoreError::NotFound(_))
    ));
}

#[test]
fn oversized_state_rejected() {
    let f = fixture(PersistenceMode::WriteThrough);
    let id = f.store.create_object("Counter", StateDocument::new()).unwrap().id;
    let t = f.store.begin_transition(&id, 0).unwrap();
    let big = doc(json!({"blob": "x".repeat(MAX_STATE_BYTES)}));
    assert!(matches!(
        f.store.commit_transition(&t, big),
        Err(StoreError::StateTooLarge(_))
    ));
    assert_eq!(f.store.get_object(&id).unwrap().version, 0);
}

#[test]
fn no_lost_updates() {
    for k in [2usize, 10, 100] {
        for mode in [
            PersistenceMode::WriteThrough,
            PersistenceMode::WriteBehind,
            PersistenceMode::MemoryOnly,
        ] {
            let f = fixture(mode);
            let id = f.store.create_object("Counter", StateDocument::new()).unwrap().id;
            thread::scope(|s| {
                for _ in 0..k {
                    s.spawn(|| increment(&f.store, &id));
                }
            });
            let rec = f.store.get_object(&id).unwrap();
            assert_eq!(rec.state["n"], json!(k), "k={k} mode={mode:?}");
            assert_eq!(rec.version, k as u64);
        }
    }
}

#[test]
fn write_calls_per_mode() {
    for (mode, expected) in [
        (PersistenceMode::WriteThrough, 6),
        (PersistenceMode::WriteBehind, 0),
        (PersistenceMode::MemoryOnly, 0),
    ] {
        let f = fixture(mode);
        let id = f.store.create_object("Counter", StateDocument::new()).unwrap().id;
        for _ in 0..5 {
            increment(&f.store, &id);
        }
        assert_eq!(f.durable.write_calls(), expected, "{mode:?}");
        let report = f.store.dht().flush_all().unwrap();
        match mode {
            PersistenceMode::WriteBehind => {
                assert_eq!(report.entries_flushed, 1);
                assert_eq!(f.durable.write_calls(), 1);
                assert_eq!(f.durable.version_of(&id), Some(5));
            }
            _ => assert_eq!(report.store_write_calls, 0),
        }
        if mode == PersistenceMode::MemoryOnly {
            assert!(f.durable.is_empty());
        }
    }
}

#[test]
fn write_behind_survives_failed_flush() {
    let f = fixture(PersistenceMode::WriteBehind);
    let id = f.store.create_object("Counter", StateDocument::new()).unwrap().id;
    for _ in 0..3 {
        increment(&f.store, &id);
    }
    f.durable.fail_next_writes(1);
    assert!(matches!(
        f.store.dht().flush_all(),
        Err(StoreError::StoreUnavailable(_))
    ));
    assert_eq!(f.durable.version_of(&id), None);
    assert_eq!(f.store.dht().metrics().dirty_entries(), 1);
    let report = f.store.dht().flush_all().unwrap();
    assert_eq!(report.entries_flushed, 1);
    assert_eq!(f.durable.version_of(&id), Some(3));
    // replaying the same (id, version) writes nothing new
    let rec = f.store.get_object(&id).unwrap();
    assert_eq!(f.store.persist_batch("n1", &[rec]).unwrap(), 0);
    assert_eq!(f.store.dht().flush_all().unwrap(), Default::default());
}

#[test]
fn presigned_put_then_get() {
    let f = fixture(PersistenceMode::WriteThrough);
    let id = ObjectId::from("obj1");
    f.store
        .create_object_with_id(id.clone(), "Image", StateDocument::new())
        .unwrap();
    let put = f.store.presign_blob(&id, "image", BlobMode::Put, 600).unwrap();
    assert_eq!(put.path(), "/blobs/obj1/image");
    let q = |u: &PresignedUrl| BlobQuery {
        mode: Some(u.mode.to_string()),
        expires: Some(u.expires.to_string()),
        sig: Some(u.sig.clone()),
    };
    let get = f.store.presign_blob(&id, "image", BlobMode::Get, 600).unwrap();
    // presigning GET before the blob exists is fine; access is what fails
    assert!(matches!(
        f.store.read_blob("obj1", "image", &q(&get)),
        Err(StoreError::BlobNotFound { .. })
    ));
    f.store.write_blob("obj1", "image", &q(&put), b"pixels").unwrap();
    assert_eq!(f.store.read_blob("obj1", "image", &q(&get)).unwrap(), b"pixels");
    assert!(f.store.get_object(&id).unwrap().blob_keys.contains("image"));
    // GET url cannot be used to PUT
    assert!(matches!(
        f.store.write_blob("obj1", "image", &q(&get), b"x"),
        Err(StoreError::Forbidden(_))
    ));
    let mut tampered = q(&get);
    tampered.sig = Some(format!("0{}", &get.sig[1..]));
    if tampered.sig.as_ref() == Some(&get.sig) {
        tampered.sig = Some(format!("1{}", &get.sig[1..]));
    }
    assert!(matches!(
        f.store.read_blob("obj1", "image", &tampered),
        Err(StoreError::Forbidden(_))
    ));
    let expired = f.store.signer().sign(&id, "image", BlobMode::Get, 1);
    assert!(matches!(
        f.store.read_blob("obj1", "image", &q(&expired)),
        Err(StoreError::Forbidden(_))
    ));
}

#[test]
fn presign_checks_keys() {
    let f = fixture(PersistenceMode::WriteThrough);
    let id = f.store.create_object("LabelledImage", StateDocument::new()).unwrap().id;
    assert!(f.store.presign_blob(&id, "image", BlobMode::Put, 60).is_ok());
    assert!(matches!(
        f.store.presign_blob(&id, "thumbnail", BlobMode::Put, 60),
        Err(StoreError::UnknownKey { .. })
    ));
    assert!(matches!(
        f.store.presign_blob(&"ghost".into(), "image", BlobMode::Put, 60),
        Err(StoreError::NotFound(_))
    ));
}

#[test]
fn restart_recovers_from_file_store() {
    let dir = tempfile::tempdir().unwrap();
    let pkg = ClassPackage {
        classes: vec![ClassDefinition::new("Counter")],
    };
    let classes = Arc::new(RwLock::new(HashMap::from([(
        "Counter".to_string(),
        Arc::new(resolve_inheritance("Counter", &pkg).unwrap()),
    )])));
    let open = |mode| {
        let durable = Arc::new(FileStore::open(dir.path().join("data"), false).unwrap());
        let dht = Arc::new(Dht::new(DhtConfig::default(), durable));
        dht.set_policy("Counter", PersistencePolicy { mode, ..Default::default() });
        StateStore::new(
            dht,
            BlobStore::new(dir.path().join("blobs")).unwrap(),
            Presigner::new("s"),
            classes.clone(),
        )
    };
    let store = open(PersistenceMode::WriteBehind);
    let id = store.create_object("Counter", StateDocument::new()).unwrap().id;
    for _ in 0..4 {
        increment(&store, &id);
    }
    store.dht().flush_all().unwrap();
    drop(store);
    let store = open(PersistenceMode::WriteBehind);
    let rec = store.get_object(&id).unwrap();
    assert_eq!((rec.version, rec.state["n"].clone()), (4, json!(4)));
}
