//! Online adaptation: routes events to the modules that must react, runs
//! the resulting pipeline with verification checkpoints, and keeps the run
//! log.

mod checkpoint;
mod engine;
mod replay;
mod route;
mod stats;

pub use checkpoint::{
    auto_decision, AbsentOperator, ChannelOperator, CheckpointStage, Decision, DecisionMessage, Mode, Operator,
    PendingCheckpoint, ScriptedOperator, AUTO_OPERATOR, CHECKPOINT_TIMEOUT_S, FALLBACK_OPERATOR,
};
pub use engine::{
    Orchestrator, OrchestratorError, PlanClock, PlanningState, RunConfig, StateSnapshot, VIRTUAL_SECONDS_PER_NODE,
};
pub use replay::{plan_digests, replay, ReplayError};
pub use route::{is_delayed, route_event, route_for_class, Module, DELAY_FACTOR};
pub use stats::{compute_trigger_stats, TriggerStats};
