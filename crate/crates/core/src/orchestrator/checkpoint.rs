use std::collections::VecDeque;
use std::fmt;
use std::sync::mpsc::Receiver;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Default operator latency bound, in simulated seconds.
pub const CHECKPOINT_TIMEOUT_S: f64 = 30.0;

pub const AUTO_OPERATOR: &str = "auto";
pub const FALLBACK_OPERATOR: &str = "auto_fallback";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Auto,
    Interactive,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Mode::Auto),
            "interactive" => Ok(Mode::Interactive),
            _ => Err(format!("unknown mode `{s}` (expected auto or interactive)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointStage {
    Poset,
    Layered,
    Plan,
    Execution,
}

impl fmt::Display for CheckpointStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CheckpointStage::Poset => "poset",
            CheckpointStage::Layered => "layered",
            CheckpointStage::Plan => "plan",
            CheckpointStage::Execution => "execution",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Decision {
    Approved,
    Edited { artifact: Value },
    Rejected { reason: String },
}

/// A checkpoint waiting for a decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingCheckpoint {
    pub checkpoint_id: u64,
    pub stage: CheckpointStage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_seq: Option<u64>,
    pub artifact: Value,
    pub violations: Vec<String>,
    pub opened_at: f64,
}

/// Decision from the auto validator.
pub fn auto_decision(violations: &[String]) -> Decision {
    if violations.is_empty() {
        Decision::Approved
    } else {
        Decision::Rejected {
            reason: violations.join("; "),
        }
    }
}

/// Source of human decisions for interactive runs.
pub trait Operator: Send {
    /// Asked once per tick while `pending` is open; returns the decision and
    /// the operator id once one is available.
    fn poll(&mut self, pending: &PendingCheckpoint, now: f64) -> Option<(Decision, String)>;
}

/// Never answers; every checkpoint times out.
#[derive(Debug, Default)]
pub struct AbsentOperator;

impl Operator for AbsentOperator {
    fn poll(&mut self, _: &PendingCheckpoint, _: f64) -> Option<(Decision, String)> {
        None
    }
}

/// A decision addressed to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionMessage {
    pub checkpoint_id: u64,
    #[serde(flatten)]
    pub decision: Decision,
    #[serde(default = "default_operator")]
    pub operator: String,
}

fn default_operator() -> String {
    "operator".into()
}

/// Receives decisions over a channel. Decisions for other checkpoints are
/// dropped with a warning.
pub struct ChannelOperator {
    rx: Receiver<DecisionMessage>,
}

impl ChannelOperator {
    pub fn new(rx: Receiver<DecisionMessage>) -> Self {
        Self { rx }
    }
}

impl Operator for ChannelOperator {
    fn poll(&mut self, pending: &PendingCheckpoint, _: f64) -> Option<(Decision, String)> {
        while let Ok(m) = self.rx.try_recv() {
            if m.checkpoint_id == pending.checkpoint_id {
                return Some((m.decision, m.operator));
            }
            tracing::warn!(checkpoint_id = m.checkpoint_id, "decision for a checkpoint that is not pending");
        }
        None
    }
}

/// Scripted decisions, released once the simulated clock reaches their time.
#[derive(Debug, Default)]
pub struct ScriptedOperator {
    decisions: VecDeque<(u64, f64, Decision, String)>,
}

impl ScriptedOperator {
    pub fn new(decisions: impl IntoIterator<Item = (u64, f64, Decision, String)>) -> Self {
        Self {
            decisions: decisions.into_iter().collect(),
        }
    }
}

impl Operator for ScriptedOperator {
    fn poll(&mut self, pending: &PendingCheckpoint, now: f64) -> Option<(Decision, String)> {
        let (id, t, _, _) = self.decisions.front()?;
        if *id != pending.checkpoint_id || now + 1e-9 < *t {
            return None;
        }
        let (_, _, d, op) = self.decisions.pop_front()?;
        Some((d, op))
    }
}
