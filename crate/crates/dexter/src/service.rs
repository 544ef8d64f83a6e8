//! HTTP and server-sent-event front end. A single loop thread owns the
//! orchestrator; handlers talk to it through a command channel and read
//! the snapshot it publishes after every tick.

use std::convert::Infallible;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use anyhow::Context;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dexter_core::mission::TaskPoset;
use dexter_core::orchestrator::{
    AbsentOperator, ChannelOperator, DecisionMessage, Mode, Operator, Orchestrator, StateSnapshot, TriggerStats,
};
use dexter_core::runlog::Record;
use dexter_core::scheduler::FleetPlan;
use dexter_core::strategy::LayeredDag;
use dexter_core::world::{EventKind, MetricsReport, Scenario};
use futures::stream::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{broadcast, oneshot};

use crate::run::Launch;

const STREAM_CAPACITY: usize = 4096;

/// Body of `POST /run`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRequest {
    pub scenario: Scenario,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// What the read endpoints serve.
#[derive(Debug, Clone)]
pub struct View {
    pub state: StateSnapshot,
    pub poset: TaskPoset,
    pub layered: LayeredDag,
    pub plan: FleetPlan,
    pub metrics: MetricsReport,
    pub stats: TriggerStats,
}

impl View {
    fn of(o: &Orchestrator) -> Self {
        let s = o.state();
        Self {
            state: o.snapshot(),
            poset: s.poset.clone(),
            layered: s.layered.clone(),
            plan: s.plan.clone(),
            metrics: o.metrics(),
            stats: o.trigger_stats(),
        }
    }
}

type Reply = oneshot::Sender<Result<(), String>>;

enum Command {
    Inject(EventKind, Reply),
    Decide(DecisionMessage, Reply),
    Run(Box<RunRequest>, Reply),
    Shutdown,
}

/// Handle shared by the HTTP handlers.
#[derive(Clone)]
pub struct App {
    commands: mpsc::Sender<Command>,
    view: Arc<RwLock<View>>,
    records: broadcast::Sender<Record>,
}

impl App {
    pub fn view(&self) -> View {
        self.view.read().expect("view lock").clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Record> {
        self.records.subscribe()
    }

    async fn ask(&self, make: impl FnOnce(Reply) -> Command) -> Result<(), String> {
        let (tx, rx) = oneshot::channel();
        self.commands.send(make(tx)).map_err(|_| "orchestration loop has stopped".to_string())?;
        rx.await.map_err(|_| "orchestration loop has stopped".to_string())?
    }
}

/// The orchestration loop and its handle.
pub struct Service {
    app: App,
    thread: Option<JoinHandle<MetricsReport>>,
}

impl Service {
    /// Starts the loop thread with an initial run. Ticks are paced `tick`
    /// apart in wall time; the run keeps going until its horizon so that
    /// injected events are still handled after the fleet goes idle.
    pub fn spawn(launch: Launch, initial: RunRequest, tick: Duration) -> anyhow::Result<Self> {
        let (records, _) = broadcast::channel(STREAM_CAPACITY);
        let (commands, rx) = mpsc::channel();
        let (ready_tx, ready_rx) = mpsc::channel();
        let stream = records.clone();
        let thread = std::thread::Builder::new()
            .name("orchestrator".into())
            .spawn(move || {
                let mut lp = match Loop::start(launch, initial, stream) {
                    Ok(lp) => lp,
                    Err(e) => {
                        let _ = ready_tx.send(Err(e));
                        return MetricsReport::default();
                    }
                };
                let view = Arc::new(RwLock::new(View::of(&lp.orch)));
                let _ = ready_tx.send(Ok(view.clone()));
                lp.run(rx, &view, tick)
            })
            .context("spawning the orchestration loop")?;
        let view = ready_rx.recv().context("orchestration loop died during start-up")??;
        Ok(Self {
            app: App { commands, view, records },
            thread: Some(thread),
        })
    }

    pub fn app(&self) -> App {
        self.app.clone()
    }

    /// Closes the current run, flushing its log, and returns its metrics.
    pub fn shutdown(mut self) -> MetricsReport {
        let _ = self.app.commands.send(Command::Shutdown);
        self.thread.take().and_then(|t| t.join().ok()).unwrap_or_default()
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        if let Some(t) = self.thread.take() {
            let _ = self.app.commands.send(Command::Shutdown);
            let _ = t.join();
        }
    }
}

struct Loop {
    launch: Launch,
    orch: Orchestrator,
    decisions: Option<mpsc::Sender<DecisionMessage>>,
    stream: broadcast::Sender<Record>,
    published: usize,
}

impl Loop {
    fn start(mut launch: Launch, req: RunRequest, stream: broadcast::Sender<Record>) -> anyhow::Result<Self> {
        launch.config.run_until_horizon = true;
        let (orch, decisions) = Self::build(&launch, req, &stream)?;
        Ok(Self {
            launch,
            orch,
            decisions,
            stream,
            published: 0,
        })
    }

    fn build(
        launch: &Launch,
        req: RunRequest,
        stream: &broadcast::Sender<Record>,
    ) -> anyhow::Result<(Orchestrator, Option<mpsc::Sender<DecisionMessage>>)> {
        req.scenario.validate()?;
        let (operator, decisions): (Box<dyn Operator>, _) = match req.mode {
            Mode::Interactive => {
                let (tx, rx) = mpsc::channel();
                (Box::new(ChannelOperator::new(rx)), Some(tx))
            }
            Mode::Auto => (Box::new(AbsentOperator), None),
        };
        let tx = stream.clone();
        let listener = Box::new(move |r: &Record| {
            let _ = tx.send(r.clone());
        });
        let seed = req.seed.unwrap_or(req.scenario.seed);
        let orch = launch.start(&req.scenario, req.mode, seed, operator, Some(listener))?;
        Ok((orch, decisions))
    }

    fn run(&mut self, rx: mpsc::Receiver<Command>, view: &RwLock<View>, tick: Duration) -> MetricsReport {
        let mut next = Instant::now() + tick;
        loop {
            let cmd = if self.orch.is_finished() {
                rx.recv().map_err(|_| RecvTimeoutError::Disconnected)
            } else {
                rx.recv_timeout(next.saturating_duration_since(Instant::now()))
            };
            match cmd {
                Ok(Command::Shutdown) | Err(RecvTimeoutError::Disconnected) => break,
                Ok(cmd) => self.handle(cmd),
                Err(RecvTimeoutError::Timeout) => {
                    self.orch.tick();
                    next = (next + tick).max(Instant::now());
                }
            }
            self.publish(view);
        }
        self.orch.finish();
        self.publish(view);
        self.orch.metrics()
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Inject(event, reply) => {
                let r = if self.orch.is_finished() {
                    Err("the run has finished".into())
                } else {
                    self.orch.scenario().validate_event(&event).map_err(|e| e.to_string())
                };
                if r.is_ok() {
                    self.orch.inject(event);
                }
                let _ = reply.send(r);
            }
            Command::Decide(msg, reply) => {
                let r = match (self.orch.pending_checkpoint(), &self.decisions) {
                    (Some(p), Some(tx)) if p.checkpoint_id == msg.checkpoint_id => {
                        tx.send(msg).map_err(|_| "operator channel closed".to_string())
                    }
                    (Some(p), Some(_)) => Err(format!(
                        "checkpoint {} is not pending (pending: {})",
                        msg.checkpoint_id, p.checkpoint_id
                    )),
                    (_, None) => Err("the run is in auto mode".into()),
                    (None, _) => Err(format!("checkpoint {} is not pending", msg.checkpoint_id)),
                };
                let _ = reply.send(r);
            }
            Command::Run(req, reply) => {
                // the old run is closed first; both may write the same log file
                let r = match req.scenario.validate() {
                    Err(e) => Err(e.to_string()),
                    Ok(()) => {
                        self.orch.finish();
                        match Self::build(&self.launch, *req, &self.stream) {
                            Ok((orch, decisions)) => {
                                self.orch = orch;
                                self.decisions = decisions;
                                self.published = 0;
                                Ok(())
                            }
                            Err(e) => Err(format!("{e:#}")),
                        }
                    }
                };
                let _ = reply.send(r);
            }
            Command::Shutdown => {}
        }
    }

    fn publish(&mut self, view: &RwLock<View>) {
        let n = self.orch.records().len();
        let mut v = view.write().expect("view lock");
        if n != self.published {
            *v = View::of(&self.orch);
            self.published = n;
        } else {
            v.state = self.orch.snapshot();
        }
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn accepted() -> Response {
    (StatusCode::ACCEPTED, Json(json!({ "accepted": true }))).into_response()
}

pub fn router(app: App) -> Router {
    Router::new()
        .route("/state", get(|State(a): State<App>| async move { Json(a.view().state) }))
        .route("/poset", get(|State(a): State<App>| async move { Json(a.view().poset) }))
        .route("/layered", get(|State(a): State<App>| async move { Json(a.view().layered) }))
        .route("/plan", get(|State(a): State<App>| async move { Json(a.view().plan) }))
        .route("/metrics", get(|State(a): State<App>| async move { Json(a.view().metrics) }))
        .route("/stats", get(|State(a): State<App>| async move { Json(a.view().stats) }))
        .route("/events", post(inject))
        .route("/decisions", post(decide))
        .route("/run", post(start_run))
        .route("/stream", get(stream))
        .with_state(app)
}

async fn inject(State(app): State<App>, Json(event): Json<EventKind>) -> Result<Response, ApiError> {
    app.ask(|r| Command::Inject(event, r))
        .await
        .map(|_| accepted())
        .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e))
}

async fn decide(State(app): State<App>, Json(msg): Json<DecisionMessage>) -> Result<Response, ApiError> {
    app.ask(|r| Command::Decide(msg, r))
        .await
        .map(|_| accepted())
        .map_err(|e| ApiError(StatusCode::CONFLICT, e))
}

async fn start_run(State(app): State<App>, Json(req): Json<RunRequest>) -> Result<Response, ApiError> {
    app.ask(|r| Command::Run(Box::new(req), r))
        .await
        .map(|_| accepted())
        .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e))
}

async fn stream(State(app): State<App>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = app.subscribe();
    let events = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(r) => {
                    let data = serde_json::to_string(&r).expect("records serialize");
                    let ev = Event::default().event(r.body.kind()).id(r.seq.to_string()).data(data);
                    return Some((Ok(ev), rx));
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "stream subscriber fell behind");
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(events).keep_alive(KeepAlive::default())
}

/// Serves `app` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: App,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(app)).with_graceful_shutdown(shutdown).await
}
