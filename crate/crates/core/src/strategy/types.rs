use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Skill {
    pub name: String,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub id: String,
    pub robot_type: String,
    pub skills: Vec<Skill>,
    pub velocity_mps: f64,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RobotSpecError {
    #[error("robot `{0}`: velocity must be positive")]
    Velocity(String),
    #[error("robot `{robot}`: skill `{skill}` has a negative or non-finite duration")]
    Duration { robot: String, skill: String },
    #[error("robot `{robot}`: skill `{skill}` is declared twice")]
    DuplicateSkill { robot: String, skill: String },
}

impl RobotSpec {
    pub fn validate(&self) -> Result<(), RobotSpecError> {
        if !(self.velocity_mps > 0.0 && self.velocity_mps.is_finite()) {
            return Err(RobotSpecError::Velocity(self.id.clone()));
        }
        let mut seen = BTreeSet::new();
        for s in &self.skills {
            if !(s.duration_s >= 0.0 && s.duration_s.is_finite()) {
                return Err(RobotSpecError::Duration {
                    robot: self.id.clone(),
                    skill: s.name.clone(),
                });
            }
            if !seen.insert(&s.name) {
                return Err(RobotSpecError::DuplicateSkill {
                    robot: self.id.clone(),
                    skill: s.name.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn skill_duration(&self, name: &str) -> Option<f64> {
        self.skills.iter().find(|s| s.name == name).map(|s| s.duration_s)
    }

    pub fn has_skill(&self, name: &str) -> bool {
        self.skill_duration(name).is_some()
    }
}

/// Skills per robot type, merged over every robot of that type.
pub fn fleet_capabilities(robots: &[RobotSpec]) -> BTreeMap<&str, BTreeSet<&str>> {
    let mut out: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in robots {
        out.entry(r.robot_type.as_str())
            .or_default()
            .extend(r.skills.iter().map(|s| s.name.as_str()));
    }
    out
}

/// Target of a subtask: the task's own site, or the nearest instance of a
/// feature kind.
pub const TASK_TARGET: &str = "task";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubtaskSpec {
    pub index: usize,
    pub robot_type: String,
    pub action: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub done_by_same_robot_as: Option<usize>,
    pub dependencies: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_override: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyDag {
    pub strategy_id: String,
    pub task_type: String,
    pub subtasks: Vec<SubtaskSpec>,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "snake_case")]
pub enum StrategyParseError {
    #[error("malformed strategy JSON: {0}")]
    Json(String),
    #[error("field `{0}` must not be empty")]
    EmptyField(String),
    #[error("strategy has no subtasks")]
    NoSubtasks,
    #[error("subtask indices must be 0..n or 1..n without gaps, found {0:?}")]
    BadIndices(Vec<usize>),
    #[error("subtask {index} depends on missing subtask {dependency}")]
    DanglingDependency { index: usize, dependency: usize },
    #[error("subtask {0} depends on itself")]
    SelfDependency(usize),
    #[error("dependency cycle through subtasks {0:?}")]
    Cycle(Vec<usize>),
    #[error("subtask {index} is bound to missing subtask {other}")]
    DanglingBinding { index: usize, other: usize },
    #[error("subtask {index} ({found}) is bound to subtask {other} of type {expected}")]
    TypeMismatch {
        index: usize,
        other: usize,
        expected: String,
        found: String,
    },
    #[error("subtask {0} has a negative or non-finite duration override")]
    BadDuration(usize),
    #[error("robot type `{0}` is not in the fleet")]
    UnknownRobotType(String),
    #[error("robot type `{robot_type}` has no skill `{skill}`")]
    MissingSkill { robot_type: String, skill: String },
    #[error("target `{0}` is neither `task` nor a known resource")]
    UnknownTarget(String),
}

impl StrategyDag {
    /// Checks the structural invariants, independent of any fleet.
    pub fn validate(&self) -> Result<(), StrategyParseError> {
        if self.strategy_id.trim().is_empty() {
            return Err(StrategyParseError::EmptyField("strategy_id".into()));
        }
        if self.task_type.trim().is_empty() {
            return Err(StrategyParseError::EmptyField("task_type".into()));
        }
        let n = self.subtasks.len();
        if n == 0 {
            return Err(StrategyParseError::NoSubtasks);
        }
        if self.subtasks.iter().enumerate().any(|(i, s)| s.index != i) {
            return Err(StrategyParseError::BadIndices(
                self.subtasks.iter().map(|s| s.index).collect(),
            ));
        }
        for s in &self.subtasks {
            for (field, v) in [("robot_type", &s.robot_type), ("action", &s.action), ("target", &s.target)] {
                if v.trim().is_empty() {
                    return Err(StrategyParseError::EmptyField(format!("subtasks[{}].{field}", s.index)));
                }
            }
            for &d in &s.dependencies {
                if d == s.index {
                    return Err(StrategyParseError::SelfDependency(d));
                }
                if d >= n {
                    return Err(StrategyParseError::DanglingDependency {
                        index: s.index,
                        dependency: d,
                    });
                }
            }
            if let Some(o) = s.done_by_same_robot_as {
                if o >= n || o == s.index {
                    return Err(StrategyParseError::DanglingBinding { index: s.index, other: o });
                }
                let other = &self.subtasks[o];
                if other.robot_type != s.robot_type {
                    return Err(StrategyParseError::TypeMismatch {
                        index: s.index,
                        other: o,
                        expected: other.robot_type.clone(),
                        found: s.robot_type.clone(),
                    });
                }
            }
            if let Some(d) = s.duration_override {
                if !(d >= 0.0 && d.is_finite()) {
                    return Err(StrategyParseError::BadDuration(s.index));
                }
            }
        }
        if let Some(cycle) = self.find_cycle() {
            return Err(StrategyParseError::Cycle(cycle));
        }
        Ok(())
    }

    fn find_cycle(&self) -> Option<Vec<usize>> {
        // 0 = unvisited, 1 = on stack, 2 = done
        fn visit(s: &StrategyDag, i: usize, mark: &mut [u8], stack: &mut Vec<usize>) -> Option<Vec<usize>> {
            mark[i] = 1;
            stack.push(i);
            for &d in &s.subtasks[i].dependencies {
                if mark[d] == 1 {
                    let pos = stack.iter().position(|&x| x == d).unwrap_or(0);
                    let mut c = stack[pos..].to_vec();
                    c.sort_unstable();
                    return Some(c);
                }
                if mark[d] == 0 {
                    if let Some(c) = visit(s, d, mark, stack) {
                        return Some(c);
                    }
                }
            }
            stack.pop();
            mark[i] = 2;
            None
        }
        let mut mark = vec![0u8; self.subtasks.len()];
        (0..self.subtasks.len()).find_map(|i| {
            if mark[i] == 0 {
                visit(self, i, &mut mark, &mut Vec::new())
            } else {
                None
            }
        })
    }

    /// Checks that every subtask can be executed by the fleet and that
    /// feature targets refer to known resources.
    pub fn validate_against(&self, robots: &[RobotSpec], resources: &[String]) -> Result<(), StrategyParseError> {
        let caps = fleet_capabilities(robots);
        for s in &self.subtasks {
            let Some(skills) = caps.get(s.robot_type.as_str()) else {
                return Err(StrategyParseError::UnknownRobotType(s.robot_type.clone()));
            };
            if !skills.contains(s.action.as_str()) {
                return Err(StrategyParseError::MissingSkill {
                    robot_type: s.robot_type.clone(),
                    skill: s.action.clone(),
                });
            }
            if s.target != TASK_TARGET && !resources.contains(&s.target) {
                return Err(StrategyParseError::UnknownTarget(s.target.clone()));
            }
        }
        Ok(())
    }

    /// Feature kinds referenced as targets.
    pub fn resources(&self) -> BTreeSet<&str> {
        self.subtasks
            .iter()
            .map(|s| s.target.as_str())
            .filter(|t| *t != TASK_TARGET)
            .collect()
    }

    /// Sum of the subtask durations when executed by `robots`; `None` if a
    /// subtask has no capable robot.
    pub fn min_total_duration(&self, robots: &[RobotSpec]) -> Option<f64> {
        self.subtasks
            .iter()
            .map(|s| {
                s.duration_override.or_else(|| {
                    robots
                        .iter()
                        .filter(|r| r.robot_type == s.robot_type)
                        .filter_map(|r| r.skill_duration(&s.action))
                        .min_by(f64::total_cmp)
                })
            })
            .sum()
    }
}

/// Parses and validates a strategy document. Indices may be 0- or 1-based;
/// they are normalized to 0-based.
pub fn parse_strategy_json(text: &str) -> Result<StrategyDag, StrategyParseError> {
    let mut dag: StrategyDag =
        serde_json::from_str(text).map_err(|e| StrategyParseError::Json(e.to_string()))?;
    normalize_indices(&mut dag)?;
    dag.validate()?;
    Ok(dag)
}

fn normalize_indices(dag: &mut StrategyDag) -> Result<(), StrategyParseError> {
    let n = dag.subtasks.len();
    if n == 0 {
        return Err(StrategyParseError::NoSubtasks);
    }
    let indices: BTreeSet<usize> = dag.subtasks.iter().map(|s| s.index).collect();
    let shift = if indices.len() == n && indices.iter().copied().eq(0..n) {
        0
    } else if indices.len() == n && indices.iter().copied().eq(1..=n) {
        1
    } else {
        return Err(StrategyParseError::BadIndices(dag.subtasks.iter().map(|s| s.index).collect()));
    };
    if shift == 1 {
        for s in &mut dag.subtasks {
            s.index -= 1;
            for d in &mut s.dependencies {
                if *d == 0 {
                    return Err(StrategyParseError::DanglingDependency {
                        index: s.index,
                        dependency: 0,
                    });
                }
                *d -= 1;
            }
            if let Some(o) = &mut s.done_by_same_robot_as {
                if *o == 0 {
                    return Err(StrategyParseError::DanglingBinding { index: s.index, other: 0 });
                }
                *o -= 1;
            }
        }
    }
    dag.subtasks.sort_by_key(|s| s.index);
    Ok(())
}

/// Candidate strategies per task type.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayeredDag {
    pub strategies: BTreeMap<String, Vec<StrategyDag>>,
}

impl LayeredDag {
    pub fn is_empty(&self) -> bool {
        self.strategies.values().all(Vec::is_empty)
    }

    pub fn strategies_for(&self, task_type: &str) -> &[StrategyDag] {
        self.strategies.get(task_type).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn strategy(&self, strategy_id: &str) -> Option<&StrategyDag> {
        self.strategies
            .values()
            .flatten()
            .find(|s| s.strategy_id == strategy_id)
    }

    pub fn contains_id(&self, strategy_id: &str) -> bool {
        self.strategy(strategy_id).is_some()
    }

    pub fn strategy_count(&self) -> usize {
        self.strategies.values().map(Vec::len).sum()
    }

    /// Adds a strategy unless its id is already present. Returns whether it
    /// was inserted.
    pub fn insert(&mut self, s: StrategyDag) -> bool {
        if self.contains_id(&s.strategy_id) {
            return false;
        }
        self.strategies.entry(s.task_type.clone()).or_default().push(s);
        true
    }

    /// Appends every strategy of `delta` whose id is new.
    pub fn merge(&mut self, delta: LayeredDag) -> usize {
        delta
            .strategies
            .into_values()
            .flatten()
            .map(|s| self.insert(s) as usize)
            .sum()
    }

    /// Task types of `types` without any strategy.
    pub fn missing<'a>(&self, types: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        types
            .into_iter()
            .filter(|t| self.strategies_for(t).is_empty())
            .map(str::to_string)
            .collect()
    }

    /// Checks the structural invariants of every strategy plus id uniqueness.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut ids = BTreeSet::new();
        for (tt, list) in &self.strategies {
            for s in list {
                if !ids.insert(&s.strategy_id) {
                    out.push(format!("strategy id `{}` is used twice", s.strategy_id));
                }
                if &s.task_type != tt {
                    out.push(format!("strategy `{}` is filed under `{tt}` but targets `{}`", s.strategy_id, s.task_type));
                }
                if let Err(e) = s.validate() {
                    out.push(format!("strategy `{}`: {e}", s.strategy_id));
                }
            }
        }
        out
    }

    /// Copy of the lowest-id strategy among `donor_types`, retargeted at
    /// `task_type`.
    pub fn replicate_for(&self, task_type: &str, donor_types: &[&str]) -> Option<StrategyDag> {
        let donor = donor_types
            .iter()
            .flat_map(|t| self.strategies_for(t))
            .min_by(|a, b| a.strategy_id.cmp(&b.strategy_id))?;
        let mut copy = donor.clone();
        copy.strategy_id = format!("{}@{task_type}", donor.strategy_id);
        copy.task_type = task_type.to_string();
        Some(copy)
    }
}

impl fmt::Display for StrategyDag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let steps: Vec<String> = self
            .subtasks
            .iter()
            .map(|s| format!("{}:{}@{}", s.robot_type, s.action, s.target))
            .collect();
        write!(f, "{} [{}]", self.strategy_id, steps.join(" | "))
    }
}
