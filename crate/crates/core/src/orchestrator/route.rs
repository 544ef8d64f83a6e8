use std::fmt;

use serde::{Deserialize, Serialize};

use crate::world::{EventClass, EventKind};

/// A subtask taking longer than this multiple of its plan counts as delayed.
pub const DELAY_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Module {
    MisComp,
    SubGen,
    SubAll,
    MapUpdate,
    Monitor,
}

impl Module {
    /// Modules reported in trigger statistics.
    pub const COUNTED: [Module; 3] = [Module::MisComp, Module::SubGen, Module::SubAll];
}

impl fmt::Display for Module {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// The fixed route of an event class. Status updates get `SubAll` only when
/// delayed; see [`route_event`].
pub fn route_for_class(class: EventClass, delayed: bool) -> Vec<Module> {
    use Module::*;
    match class {
        EventClass::NewTaskInstance => vec![SubAll],
        EventClass::NewPriorityTaskInstance => vec![MisComp, SubAll],
        EventClass::NewTaskType => vec![MisComp, SubGen, SubAll],
        EventClass::NewFeatureType => vec![SubGen, SubAll],
        EventClass::NewFeatureInstance => vec![MapUpdate, SubAll],
        EventClass::SubtaskStatusUpdate if delayed => vec![Monitor, SubAll],
        EventClass::SubtaskStatusUpdate => vec![Monitor],
        EventClass::RobotFailure => vec![SubAll],
    }
}

pub fn is_delayed(kind: &EventKind) -> bool {
    match kind {
        EventKind::SubtaskStatusUpdate { planned_s, actual_s, .. } => *actual_s > DELAY_FACTOR * planned_s + 1e-9,
        _ => false,
    }
}

pub fn route_event(kind: &EventKind) -> Vec<Module> {
    route_for_class(kind.class(), is_delayed(kind))
}
