//! Staged strategy generation: context analysis, meta-policy tuning,
//! subtask guide and subtask sequences, run against a pluggable backend.

mod backend;
mod pipeline;
mod prompts;
mod types;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use backend::{mock_backend, parse_prompt_key, BackendError, GenerationBackend, MockBackend, MockRule, PromptKey};
pub use pipeline::{
    run_generation_pipeline, stage_context_analysis, stage_meta_policy_tuning, stage_subtask_guide,
    stage_subtask_sequences, ContextSummary, GenerationOutput, GuideStep, HistoryEntry, MetaPolicy, Outline,
    PipelineError, PolicyRule, PromptRecord, SceneDescription, StageError, SubtaskGuide, ValidationError,
    MAX_RETRIES, MAX_STRATEGIES_PER_TASK,
};
pub use prompts::{prompt_hash, PROMPT_VERSION};
pub use types::{
    fleet_capabilities, parse_strategy_json, LayeredDag, RobotSpec, RobotSpecError, Skill, StrategyDag,
    StrategyParseError, SubtaskSpec, TASK_TARGET,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Context,
    Meta,
    Guide,
    Sequences,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Context, Stage::Meta, Stage::Guide, Stage::Sequences];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Context => "context",
            Stage::Meta => "meta",
            Stage::Guide => "guide",
            Stage::Sequences => "sequences",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
