#![allow(dead_code)]

use std::path::PathBuf;
use std::time::Duration;

use dexter::{BackendChoice, Launch, RunRequest, Service};
use dexter_core::orchestrator::Mode;
use dexter_core::runlog::Record;
use dexter_core::world::Scenario;
use futures::StreamExt;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

pub fn fixture(name: &str) -> Scenario {
    dexter::read_scenario(&fixture_path(&format!("{name}.json"))).unwrap()
}

/// The timeline scenario with nothing scripted and a long horizon, so the
/// only events are the ones a test injects.
pub fn quiet() -> Scenario {
    let mut s = fixture("timeline_mini");
    s.script.clear();
    s.horizon_s = 1e5;
    s
}

pub struct Running {
    pub service: Service,
    pub base: String,
    pub client: reqwest::Client,
    server: tokio::task::JoinHandle<()>,
}

impl Running {
    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn get<T: serde::de::DeserializeOwned>(&self, path: &str) -> T {
        let r = self.client.get(self.url(path)).send().await.unwrap();
        assert_eq!(r.status(), 200, "{path}");
        r.json().await.unwrap()
    }

    pub async fn post(&self, path: &str, body: serde_json::Value) -> (u16, serde_json::Value) {
        let r = self.client.post(self.url(path)).json(&body).send().await.unwrap();
        let status = r.status().as_u16();
        (status, r.json().await.unwrap_or(serde_json::Value::Null))
    }

    pub async fn stream(&self) -> SseReader {
        let r = self.client.get(self.url("/stream")).send().await.unwrap();
        assert_eq!(r.status(), 200);
        assert!(r.headers()["content-type"].to_str().unwrap().starts_with("text/event-stream"));
        SseReader {
            body: Box::pin(r.bytes_stream()),
            buf: String::new(),
        }
    }

    pub async fn stop(self) -> dexter_core::world::MetricsReport {
        self.server.abort();
        tokio::task::spawn_blocking(move || self.service.shutdown()).await.unwrap()
    }
}

pub async fn start(launch: Launch, scenario: Scenario, mode: Mode, tick: Duration) -> Running {
    let req = RunRequest {
        scenario,
        mode,
        seed: None,
    };
    let service = tokio::task::spawn_blocking(move || Service::spawn(launch, req, tick))
        .await
        .unwrap()
        .unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let app = service.app();
    let server = tokio::spawn(async move {
        dexter::serve(listener, app, std::future::pending()).await.unwrap();
    });
    Running {
        service,
        base,
        client: reqwest::Client::new(),
        server,
    }
}

pub fn mock_launch() -> Launch {
    Launch::new(BackendChoice::Mock(None))
}

type Body = std::pin::Pin<Box<dyn futures::Stream<Item = reqwest::Result<bytes::Bytes>> + Send>>;

pub struct SseReader {
    body: Body,
    buf: String,
}

impl SseReader {
    /// Next record on the stream, checking the SSE framing against it.
    pub async fn next(&mut self) -> Option<Record> {
        loop {
            while let Some(end) = self.buf.find("\n\n") {
                let frame: String = self.buf.drain(..end + 2).collect();
                let mut event = None;
                let mut id = None;
                let mut data = String::new();
                for line in frame.lines() {
                    if let Some(v) = line.strip_prefix("event:") {
                        event = Some(v.trim().to_string());
                    } else if let Some(v) = line.strip_prefix("id:") {
                        id = Some(v.trim().to_string());
                    } else if let Some(v) = line.strip_prefix("data:") {
                        data.push_str(v.trim_start());
                    }
                }
                if data.is_empty() {
                    continue; // keep-alive comment
                }
                let r: Record = serde_json::from_str(&data).unwrap();
                assert_eq!(event.as_deref(), Some(r.body.kind()));
                assert_eq!(id, Some(r.seq.to_string()));
                return Some(r);
            }
            let chunk = self.body.next().await?.ok()?;
            self.buf.push_str(&String::from_utf8_lossy(&chunk));
        }
    }

    /// Reads until `pred` matches, failing after `secs` seconds.
    pub async fn until(&mut self, secs: u64, mut pred: impl FnMut(&Record) -> bool) -> Record {
        let fut = async {
            while let Some(r) = self.next().await {
                if pred(&r) {
                    return Some(r);
                }
            }
            None
        };
        tokio::time::timeout(Duration::from_secs(secs), fut)
            .await
            .expect("timed out waiting on the stream")
            .expect("stream closed")
    }
}

/// Polls `/state` until `pred` holds.
pub async fn wait_state(
    run: &Running,
    secs: u64,
    mut pred: impl FnMut(&dexter_core::orchestrator::StateSnapshot) -> bool,
) -> dexter_core::orchestrator::StateSnapshot {
    let deadline = tokio::time::Instant::now() + Duration::from_secs(secs);
    loop {
        let s = run.get("/state").await;
        if pred(&s) {
            return s;
        }
        assert!(tokio::time::Instant::now() < deadline, "state never matched: {s:?}");
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}
