//! Strategy selection, subtask assignment and scheduling for minimum
//! makespan.

mod bnb;
mod inner;
mod instance;
mod plan;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{Cell, GridMap};
use crate::mission::{TaskId, TaskPoset};
use crate::strategy::{LayeredDag, RobotSpec};

pub use bnb::{bnb_search, bnb_search_traced, lower_bound, SearchStats};
pub use inner::{greedy_upper_bound, root_lower_bound, solve_inner_schedule, Budget, InnerProblem, InnerResult, Placement, Schedule};
pub use instance::{resolve_target, Instance};
pub use plan::{validate_plan, PlanViolation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub spec: RobotSpec,
    /// Where the robot will be once it is free.
    pub location: Cell,
    pub available_at: f64,
    #[serde(default)]
    pub failed: bool,
}

/// A subtask that has started; it keeps its robot, strategy and timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressItem {
    pub task_id: TaskId,
    pub strategy_id: String,
    pub index: usize,
    pub action: String,
    pub robot: String,
    pub start_s: f64,
    /// Actual end when completed, planned end otherwise.
    pub end_s: f64,
    pub cell: Cell,
    pub completed: bool,
}

/// Everything the scheduler looks at.
#[derive(Debug, Clone, Copy)]
pub struct PlanningInput<'a> {
    pub poset: &'a TaskPoset,
    pub layered: &'a LayeredDag,
    pub robots: &'a [RobotState],
    pub map: &'a GridMap,
    /// Nothing new may start before this time.
    pub now: f64,
    pub progress: &'a [ProgressItem],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Search nodes (outer and inner) before returning the incumbent.
    pub max_nodes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_limit: Option<Duration>,
    /// Prune with the summed-minimum-work bound instead of the admissible one.
    #[serde(default)]
    pub paper_lb: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            max_nodes: 200_000,
            time_limit: None,
            paper_lb: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedSubtask {
    pub task_id: TaskId,
    pub strategy_id: String,
    pub index: usize,
    pub action: String,
    pub robot: String,
    pub start_s: f64,
    pub end_s: f64,
    pub cell: Cell,
    /// Already started when the plan was made.
    #[serde(default)]
    pub fixed: bool,
}

/// Per-robot timed local plans.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FleetPlan {
    pub makespan_s: f64,
    pub optimal: bool,
    pub nodes_expanded: u64,
    pub robots: BTreeMap<String, Vec<PlannedSubtask>>,
    /// Strategy chosen for each scheduled task.
    #[serde(default)]
    pub selection: BTreeMap<TaskId, String>,
    /// Tasks left out because no usable strategy exists yet.
    #[serde(default)]
    pub deferred: Vec<TaskId>,
}

impl FleetPlan {
    pub fn subtasks(&self) -> impl Iterator<Item = &PlannedSubtask> {
        self.robots.values().flatten()
    }

    pub fn task_subtasks<'a>(&'a self, task: &'a TaskId) -> impl Iterator<Item = &'a PlannedSubtask> + 'a {
        self.subtasks().filter(move |s| &s.task_id == task)
    }

    /// Earliest start among a task's subtasks.
    pub fn task_start(&self, task: &TaskId) -> Option<f64> {
        self.task_subtasks(task).map(|s| s.start_s).min_by(f64::total_cmp)
    }

    pub fn task_end(&self, task: &TaskId) -> Option<f64> {
        self.task_subtasks(task).map(|s| s.end_s).max_by(f64::total_cmp)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ScheduleError {
    #[error("no feasible plan")]
    NoFeasiblePlan,
}

/// Re-plans from the current state. Started subtasks stay as they are and
/// failed robots receive nothing new.
pub fn repair_plan(input: &PlanningInput<'_>, config: &SearchConfig) -> Result<FleetPlan, ScheduleError> {
    bnb_search(input, config)
}
