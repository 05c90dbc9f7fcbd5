#![allow(dead_code)]

use std::sync::Arc;

use oaas_core::platform::{Platform, PlatformConfig};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub const LISTING: &str = r#"
classes:
  - name: Image
    qos:
        throughput: 100
    constraint:
        persistent: true
    keySpecs:
      - name: image
    functions:
      - name: resize
        image: img/resize
      - name: changeFormat
        image: img/change-format
  - name: LabelledImage
    parent: Image
    functions:
      - name: detectObject
        image: img/detect-object
"#;

pub const COUNTER: &str = r#"
classes:
  - name: Counter
    qos: {throughput: 1}
    functions:
      - {name: inc, endpoint: local://inc}
      - {name: sleep, endpoint: local://sleep-ms}
      - {name: down, endpoint: "http://127.0.0.1:1"}
      - name: twice
        kind: macro
        dataflow:
          steps:
            - {alias: a, use: inc}
            - {alias: b, use: inc, args: {after: $a}}
          output: b
"#;

pub struct Server {
    pub base: String,
    pub platform: Arc<Platform>,
    stop: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<anyhow::Result<()>>>,
}

impl Server {
    pub async fn start(mut config: PlatformConfig) -> Server {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        config.engine.public_url = base.clone();
        let platform = Platform::open(config).unwrap();
        let (tx, rx) = oneshot::channel();
        let task = tokio::spawn(oaas_gateway::serve(platform.clone(), listener, async {
            let _ = rx.await;
        }));
        Server {
            base,
            platform,
            stop: Some(tx),
            task: Some(task),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    /// Graceful stop, which flushes the cache.
    pub async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.task.take().unwrap().await.unwrap().unwrap();
    }
}
