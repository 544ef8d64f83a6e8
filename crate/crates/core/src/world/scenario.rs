use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::event::EventKind;
use crate::geo::{Cell, CellState, GridMap, MapError};
use crate::mission::MissionFile;
use crate::strategy::{MetaPolicy, MockRule, RobotSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationSpec {
    pub id: String,
    pub kind: String,
    pub cell: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub width: u32,
    pub height: u32,
    pub cell_m: f64,
    #[serde(default)]
    pub obstacles: Vec<Cell>,
    /// Cells that start unexplored.
    #[serde(default)]
    pub unknown: Vec<Cell>,
    #[serde(default)]
    pub stations: Vec<StationSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetEntry {
    #[serde(flatten)]
    pub spec: RobotSpec,
    pub start: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Reveal {
    AtTime(f64),
    WhenCellExplored(Cell),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptItem {
    pub reveal: Reveal,
    pub event: EventKind,
}

/// Scripted slowdown: matching subtasks take `factor` times their nominal
/// duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub map: MapSpec,
    pub fleet: Vec<FleetEntry>,
    pub mission: MissionFile,
    #[serde(default)]
    pub script: Vec<ScriptItem>,
    /// Ground-truth strategy length per task type.
    #[serde(default)]
    pub gt: BTreeMap<String, usize>,
    pub horizon_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
    /// Uniform relative duration noise, e.g. 0.1 for ±10 %.
    #[serde(default)]
    pub execution_jitter: f64,
    #[serde(default)]
    pub mock_rules: Vec<MockRule>,
    #[serde(default)]
    pub initial_policy: MetaPolicy,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario schema: {0}")]
    Schema(String),
    #[error("scenario map: {0}")]
    Map(#[from] MapError),
    #[error("scenario: {0}")]
    Invalid(String),
}

impl Scenario {
    /// Ground-truth map: obstacles and every station, nothing unexplored.
    pub fn truth_map(&self) -> Result<GridMap, ScenarioError> {
        let m = &self.map;
        let mut map = GridMap::new(m.width, m.height, m.cell_m)?;
        for &c in &m.obstacles {
            map.set_state(c, CellState::Obstacle)?;
        }
        for s in &m.stations {
            map.add_feature(s.id.clone(), s.kind.clone(), s.cell)?;
        }
        Ok(map)
    }

    /// The map as initially known to the planner.
    pub fn initial_map(&self) -> Result<GridMap, ScenarioError> {
        let mut map = self.truth_map()?;
        for &c in &self.map.unknown {
            if map.state(c) == Some(CellState::Free) {
                map.set_state(c, CellState::Unknown)?;
            }
        }
        let hidden: BTreeSet<Cell> = self.map.unknown.iter().copied().collect();
        map.features.retain(|_, f| !hidden.contains(&f.cell));
        Ok(map)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.fleet.is_empty() {
            return bad("fleet is empty".into());
        }
        let truth = self.truth_map()?;
        let known = self.initial_map()?;
        let mut ids = BTreeSet::new();
        for r in &self.fleet {
            if !ids.insert(&r.spec.id) {
                return bad(format!("duplicate robot id {}", r.spec.id));
            }
            r.spec.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            known.check_endpoint(r.start)?;
        }
        for (t, n) in &self.gt {
            if *n == 0 {
                return bad(format!("ground truth for {t} must be at least 1"));
            }
        }
        if !(self.horizon_s > 0.0 && self.horizon_s.is_finite()) {
            return bad("horizon_s must be positive".into());
        }
        if !(0.0..1.0).contains(&self.execution_jitter) {
            return bad("execution_jitter must be in [0, 1)".into());
        }
        for d in &self.disturbances {
            if !(d.factor > 0.0 && d.factor.is_finite()) {
                return bad("disturbance factor must be positive".into());
            }
        }
        for (i, item) in self.script.iter().enumerate() {
            match item.reveal {
                Reveal::AtTime(t) if !(t >= 0.0 && t.is_finite()) => return bad(format!("script[{i}]: bad reveal time")),
                Reveal::WhenCellExplored(c) if !truth.in_bounds(c) => {
                    return bad(format!("script[{i}]: reveal cell {c} outside the map"));
                }
                _ => {}
            }
            self.check_event(&item.event, &truth)
                .map_err(|e| ScenarioError::Invalid(format!("script[{i}]: {e}")))?;
        }
        self.mission.to_spec().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Checks an externally injected event against the ground-truth map and
    /// fleet.
    pub fn validate_event(&self, event: &EventKind) -> Result<(), ScenarioError> {
        self.check_event(event, &self.truth_map()?).map_err(ScenarioError::Invalid)
    }

    fn check_event(&self, event: &EventKind, truth: &GridMap) -> Result<(), String> {
        let cell = match event {
            EventKind::NewTaskInstance { cell, .. }
            | EventKind::NewPriorityTaskInstance { cell, .. }
            | EventKind::NewTaskType { cell, .. }
            | EventKind::NewFeatureType { cell, .. }
            | EventKind::NewFeatureInstance { cell, .. } => *cell,
            EventKind::RobotFailure { robot } => {
                return match self.fleet.iter().any(|r| &r.spec.id == robot) {
                    true => Ok(()),
                    false => Err(format!("unknown robot {robot}")),
                };
            }
            EventKind::SubtaskStatusUpdate { .. } => return Err("status updates come from execution".into()),
        };
        match truth.state(cell) {
            Some(CellState::Free) => Ok(()),
            _ => Err(format!("cell {cell} is not free")),
        }
    }

    pub fn robot_specs(&self) -> Vec<RobotSpec> {
        self.fleet.iter().map(|r| r.spec.clone()).collect()
    }
}

/// Parses and validates a scenario file.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Schema(e.to_string()))?;
    s.validate()?;
    Ok(s)
}
