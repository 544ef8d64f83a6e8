use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geo::Cell;
use crate::mission::TaskId;

/// The seven contingency classes the fleet reacts to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventClass {
    NewTaskInstance,
    NewPriorityTaskInstance,
    NewTaskType,
    NewFeatureType,
    NewFeatureInstance,
    SubtaskStatusUpdate,
    RobotFailure,
}

impl EventClass {
    pub const ALL: [EventClass; 7] = [
        EventClass::NewTaskInstance,
        EventClass::NewPriorityTaskInstance,
        EventClass::NewTaskType,
        EventClass::NewFeatureType,
        EventClass::NewFeatureInstance,
        EventClass::SubtaskStatusUpdate,
        EventClass::RobotFailure,
    ];

    pub fn roman(self) -> &'static str {
        match self {
            EventClass::NewTaskInstance => "I",
            EventClass::NewPriorityTaskInstance => "II",
            EventClass::NewTaskType => "III",
            EventClass::NewFeatureType => "IV",
            EventClass::NewFeatureInstance => "V",
            EventClass::SubtaskStatusUpdate => "VI",
            EventClass::RobotFailure => "VII",
        }
    }
}

impl fmt::Display for EventClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskStatus {
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum EventKind {
    NewTaskInstance {
        task_type: String,
        cell: Cell,
    },
    NewPriorityTaskInstance {
        task_type: String,
        cell: Cell,
    },
    NewTaskType {
        task_type: String,
        cell: Cell,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        family: Option<String>,
        #[serde(default)]
        priority_rank: u32,
    },
    NewFeatureType {
        feature_id: String,
        kind: String,
        cell: Cell,
    },
    NewFeatureInstance {
        feature_id: String,
        kind: String,
        cell: Cell,
    },
    SubtaskStatusUpdate {
        task_id: TaskId,
        strategy_id: String,
        index: usize,
        robot: String,
        status: SubtaskStatus,
        planned_s: f64,
        actual_s: f64,
    },
    RobotFailure {
        robot: String,
    },
}

impl EventKind {
    pub fn class(&self) -> EventClass {
        match self {
            EventKind::NewTaskInstance { .. } => EventClass::NewTaskInstance,
            EventKind::NewPriorityTaskInstance { .. } => EventClass::NewPriorityTaskInstance,
            EventKind::NewTaskType { .. } => EventClass::NewTaskType,
            EventKind::NewFeatureType { .. } => EventClass::NewFeatureType,
            EventKind::NewFeatureInstance { .. } => EventClass::NewFeatureInstance,
            EventKind::SubtaskStatusUpdate { .. } => EventClass::SubtaskStatusUpdate,
            EventKind::RobotFailure { .. } => EventClass::RobotFailure,
        }
    }

    /// Short text used in scene histories.
    pub fn describe(&self) -> String {
        match self {
            EventKind::NewTaskInstance { task_type, cell } => format!("new {task_type} at {cell}"),
            EventKind::NewPriorityTaskInstance { task_type, cell } => format!("priority {task_type} at {cell}"),
            EventKind::NewTaskType { task_type, cell, .. } => format!("new task type {task_type} at {cell}"),
            EventKind::NewFeatureType { kind, cell, .. } => format!("new resource type {kind} at {cell}"),
            EventKind::NewFeatureInstance { kind, cell, .. } => format!("new {kind} at {cell}"),
            EventKind::SubtaskStatusUpdate { task_id, index, robot, .. } => {
                format!("{robot} completed subtask {index} of {task_id}")
            }
            EventKind::RobotFailure { robot } => format!("{robot} failed"),
        }
    }
}

/// Where an event came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventSource {
    Script,
    Injected,
    Sim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub source: EventSource,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl Event {
    pub fn class(&self) -> EventClass {
        self.kind.class()
    }
}
