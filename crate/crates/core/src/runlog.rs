//! JSON-lines run log. Every record carries a monotonic sequence number and
//! the simulated time at which it was written.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::geo::Cell;
use crate::mission::TaskId;
use crate::orchestrator::{CheckpointStage, Decision, Module, RunConfig, TriggerStats};
use crate::world::{Event, EventClass, MetricsReport, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub seq: u64,
    pub t: f64,
    #[serde(flatten)]
    pub body: RecordBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordBody {
    RunStarted {
        config: RunConfig,
        scenario: Box<Scenario>,
    },
    Event {
        event: Event,
        route: Vec<Module>,
    },
    /// An event entering its adaptation pipeline, or handled by monitoring
    /// alone.
    Trigger {
        event_seq: u64,
        class: EventClass,
        modules: Vec<Module>,
    },
    PipelineRun {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        event_seq: Option<u64>,
        tasks: Vec<String>,
        resources: Vec<String>,
        backend_calls: usize,
        new_strategies: Vec<String>,
        policy_version: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    CheckpointOpened {
        checkpoint_id: u64,
        stage: CheckpointStage,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        event_seq: Option<u64>,
        artifact: Value,
        violations: Vec<String>,
    },
    Checkpoint {
        checkpoint_id: u64,
        stage: CheckpointStage,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        event_seq: Option<u64>,
        #[serde(flatten)]
        decision: Decision,
        violations: Vec<String>,
        operator: String,
        latency_s: f64,
    },
    Plan {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        event_seq: Option<u64>,
        valid: bool,
        plan_time_s: f64,
        makespan_s: f64,
        optimal: bool,
        nodes: u64,
        tasks: usize,
        subtasks: usize,
        deferred: Vec<TaskId>,
        violations: Vec<String>,
        digest: String,
    },
    TaskRevealed {
        task_id: TaskId,
        task_type: String,
        cell: Cell,
    },
    TaskCompleted {
        task_id: TaskId,
        task_type: String,
        strategy_id: String,
        subtasks: usize,
    },
    Rollback {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        event_seq: Option<u64>,
        reason: String,
    },
    Warning {
        message: String,
    },
    RunFinished {
        metrics: MetricsReport,
        stats: TriggerStats,
    },
}

impl RecordBody {
    pub fn kind(&self) -> &'static str {
        match self {
            RecordBody::RunStarted { .. } => "run_started",
            RecordBody::Event { .. } => "event",
            RecordBody::Trigger { .. } => "trigger",
            RecordBody::PipelineRun { .. } => "pipeline_run",
            RecordBody::CheckpointOpened { .. } => "checkpoint_opened",
            RecordBody::Checkpoint { .. } => "checkpoint",
            RecordBody::Plan { .. } => "plan",
            RecordBody::TaskRevealed { .. } => "task_revealed",
            RecordBody::TaskCompleted { .. } => "task_completed",
            RecordBody::Rollback { .. } => "rollback",
            RecordBody::Warning { .. } => "warning",
            RecordBody::RunFinished { .. } => "run_finished",
        }
    }
}

/// Hex SHA-256 of a value's canonical JSON.
pub fn digest<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).unwrap_or_default();
    hex::encode(Sha256::digest(text.as_bytes()))
}

type Listener = Box<dyn FnMut(&Record) + Send>;

/// In-memory log with an optional line sink and record listeners.
#[derive(Default)]
pub struct RunLog {
    records: Vec<Record>,
    sink: Option<Box<dyn Write + Send>>,
    listeners: Vec<Listener>,
}

impl std::fmt::Debug for RunLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunLog").field("records", &self.records.len()).finish()
    }
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_sink(sink: Box<dyn Write + Send>) -> Self {
        Self {
            sink: Some(sink),
            ..Self::default()
        }
    }

    pub fn subscribe(&mut self, listener: impl FnMut(&Record) + Send + 'static) {
        self.listeners.push(Box::new(listener));
    }

    pub fn append(&mut self, t: f64, body: RecordBody) -> u64 {
        let seq = self.records.len() as u64;
        let r = Record { seq, t, body };
        if let Some(sink) = &mut self.sink {
            let line = serde_json::to_string(&r).expect("records serialize");
            if let Err(e) = writeln!(sink, "{line}") {
                tracing::error!(error = %e, "run log write failed");
            }
        }
        for l in &mut self.listeners {
            l(&r);
        }
        self.records.push(r);
        seq
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn flush(&mut self) -> io::Result<()> {
        match &mut self.sink {
            Some(s) => s.flush(),
            None => Ok(()),
        }
    }

    /// The whole log as JSON lines.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunLogError {
    #[error("run log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("run log line {line}: sequence number {found}, expected {expected}")]
    Sequence { line: usize, found: u64, expected: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads JSON lines, checking that sequence numbers count up from zero.
pub fn read_runlog(reader: impl BufRead) -> Result<Vec<Record>, RunLogError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(&line).map_err(|e| RunLogError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let expected = out.len() as u64;
        if r.seq != expected {
            return Err(RunLogError::Sequence {
                line: i + 1,
                found: r.seq,
                expected,
            });
        }
        out.push(r);
    }
    Ok(out)
}

pub fn parse_runlog(text: &str) -> Result<Vec<Record>, RunLogError> {
    read_runlog(text.as_bytes())
}
