//! Independent plan checker.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{resolve_target, FleetPlan, PlannedSubtask, RobotState};
use crate::geo::GridMap;
use crate::mission::{TaskId, TaskPoset};
use crate::strategy::LayeredDag;

const TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum PlanViolation {
    UnknownRobot { robot: String },
    FailedRobot { robot: String, task: TaskId, index: usize },
    UnknownTask { task: TaskId },
    UnknownStrategy { task: TaskId, strategy_id: String },
    MixedStrategies { task: TaskId },
    MissingSubtask { task: TaskId, index: usize },
    DuplicateSubtask { task: TaskId, index: usize },
    Capability { robot: String, task: TaskId, index: usize },
    Duration { task: TaskId, index: usize, expected: f64, found: f64 },
    WrongLocation { task: TaskId, index: usize },
    NegativeStart { task: TaskId, index: usize },
    RobotOverlap { robot: String, first: (TaskId, usize), second: (TaskId, usize) },
    Travel { robot: String, task: TaskId, index: usize, earliest: f64, start: f64 },
    Dependency { task: TaskId, index: usize, dependency: usize },
    SameRobot { task: TaskId, index: usize, other: usize },
    Precedence { before: TaskId, after: TaskId },
    ExclusionOverlap { a: TaskId, b: TaskId },
    Makespan { expected: f64, found: f64 },
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", serde_json::to_string(self).unwrap_or_default())
    }
}

fn overlap(a: &PlannedSubtask, b: &PlannedSubtask) -> bool {
    a.start_s < b.end_s - TOL && b.start_s < a.end_s - TOL
}

/// Checks a plan against every scheduling constraint. Started (fixed)
/// subtasks are exempt from duration, capability-state and travel checks
/// into them, since they reflect what actually happened.
pub fn validate_plan(
    plan: &FleetPlan,
    poset: &TaskPoset,
    layered: &LayeredDag,
    robots: &[RobotState],
    map: &GridMap,
) -> Vec<PlanViolation> {
    let mut out = Vec::new();
    let robot_by_id: BTreeMap<&str, &RobotState> = robots.iter().map(|r| (r.spec.id.as_str(), r)).collect();

    // group subtasks by task
    let mut by_task: BTreeMap<&TaskId, Vec<&PlannedSubtask>> = BTreeMap::new();
    for (rid, list) in &plan.robots {
        for s in list {
            if s.robot != *rid {
                out.push(PlanViolation::UnknownRobot { robot: s.robot.clone() });
            }
            by_task.entry(&s.task_id).or_default().push(s);
        }
    }

    for (task, subs) in &by_task {
        let Some(node) = poset.task(task) else {
            out.push(PlanViolation::UnknownTask { task: (*task).clone() });
            continue;
        };
        let sid = &subs[0].strategy_id;
        if subs.iter().any(|s| &s.strategy_id != sid) {
            out.push(PlanViolation::MixedStrategies { task: (*task).clone() });
            continue;
        }
        let Some(strat) = layered.strategy(sid).filter(|s| s.task_type == node.task_type) else {
            out.push(PlanViolation::UnknownStrategy {
                task: (*task).clone(),
                strategy_id: sid.clone(),
            });
            continue;
        };
        let mut seen = BTreeMap::new();
        for s in subs {
            if seen.insert(s.index, *s).is_some() {
                out.push(PlanViolation::DuplicateSubtask { task: (*task).clone(), index: s.index });
            }
        }
        // a deferred task keeps only the work already under way
        let partial = plan.deferred.contains(task) && subs.iter().all(|s| s.fixed);
        for st in &strat.subtasks {
            let Some(s) = seen.get(&st.index) else {
                if !partial {
                    out.push(PlanViolation::MissingSubtask { task: (*task).clone(), index: st.index });
                }
                continue;
            };
            let robot = robot_by_id.get(s.robot.as_str());
            match robot {
                None => out.push(PlanViolation::UnknownRobot { robot: s.robot.clone() }),
                Some(r) => {
                    if r.failed && !s.fixed {
                        out.push(PlanViolation::FailedRobot {
                            robot: s.robot.clone(),
                            task: (*task).clone(),
                            index: s.index,
                        });
                    }
                    let dur = st.duration_override.or_else(|| r.spec.skill_duration(&st.action));
                    if r.spec.robot_type != st.robot_type || dur.is_none() || s.action != st.action {
                        out.push(PlanViolation::Capability {
                            robot: s.robot.clone(),
                            task: (*task).clone(),
                            index: s.index,
                        });
                    } else if let Some(d) = dur {
                        if !s.fixed && ((s.end_s - s.start_s) - d).abs() > TOL {
                            out.push(PlanViolation::Duration {
                                task: (*task).clone(),
                                index: s.index,
                                expected: d,
                                found: s.end_s - s.start_s,
                            });
                        }
                    }
                }
            }
            if s.start_s < -TOL {
                out.push(PlanViolation::NegativeStart { task: (*task).clone(), index: s.index });
            }
            if !s.fixed {
                let ok = match node.site {
                    Some(site) => resolve_target(map, site, &st.target) == Some(s.cell),
                    None => false,
                };
                if !ok {
                    out.push(PlanViolation::WrongLocation { task: (*task).clone(), index: s.index });
                }
            }
            for &d in &st.dependencies {
                if let Some(dep) = seen.get(&d) {
                    if dep.end_s > s.start_s + TOL {
                        out.push(PlanViolation::Dependency {
                            task: (*task).clone(),
                            index: s.index,
                            dependency: d,
                        });
                    }
                }
            }
            if let Some(o) = st.done_by_same_robot_as {
                if let Some(other) = seen.get(&o) {
                    if other.robot != s.robot {
                        out.push(PlanViolation::SameRobot {
                            task: (*task).clone(),
                            index: s.index,
                            other: o,
                        });
                    }
                }
            }
        }
    }

    // per-robot sequencing and travel
    for (rid, list) in &plan.robots {
        let Some(r) = robot_by_id.get(rid.as_str()) else {
            out.push(PlanViolation::UnknownRobot { robot: rid.clone() });
            continue;
        };
        let mut seq: Vec<&PlannedSubtask> = list.iter().collect();
        seq.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then(a.end_s.total_cmp(&b.end_s)));
        for w in seq.windows(2) {
            if overlap(w[0], w[1]) || w[1].start_s < w[0].end_s - TOL {
                out.push(PlanViolation::RobotOverlap {
                    robot: rid.clone(),
                    first: (w[0].task_id.clone(), w[0].index),
                    second: (w[1].task_id.clone(), w[1].index),
                });
            }
        }
        let mut prev: Option<&PlannedSubtask> = None;
        for s in &seq {
            if !s.fixed {
                let (from, ready) = match prev {
                    Some(p) => (p.cell, p.end_s),
                    None => (r.location, r.available_at),
                };
                let travel = map.travel_time(from, s.cell, r.spec.velocity_mps).unwrap_or(f64::INFINITY);
                let earliest = ready + travel;
                if s.start_s < earliest - TOL {
                    out.push(PlanViolation::Travel {
                        robot: rid.clone(),
                        task: s.task_id.clone(),
                        index: s.index,
                        earliest,
                        start: s.start_s,
                    });
                }
            }
            prev = Some(s);
        }
    }

    // task-level relations
    let first_start = |t: &TaskId| by_task.get(t).map(|v| v.iter().map(|s| s.start_s).fold(f64::INFINITY, f64::min));
    for (h, l) in &poset.precedence {
        let Some(sl) = first_start(l) else {
            continue;
        };
        // a successor that was already under way cannot be reordered
        if by_task.get(l).is_some_and(|v| v.iter().any(|s| s.fixed)) {
            continue;
        }
        match first_start(h) {
            Some(sh) => {
                if sl < sh - TOL {
                    out.push(PlanViolation::Precedence { before: h.clone(), after: l.clone() });
                }
            }
            None => {
                // a predecessor with a site must be planned before its successor
                let sited = poset.task(h).is_some_and(|n| n.site.is_some());
                if sited {
                    out.push(PlanViolation::Precedence { before: h.clone(), after: l.clone() });
                }
            }
        }
    }
    for (a, b) in &poset.exclusion {
        let (Some(xa), Some(xb)) = (by_task.get(a), by_task.get(b)) else {
            continue;
        };
        if xa.iter().any(|p| xb.iter().any(|q| overlap(p, q))) {
            out.push(PlanViolation::ExclusionOverlap { a: a.clone(), b: b.clone() });
        }
    }

    let max_end = plan.subtasks().map(|s| s.end_s).fold(0.0, f64::max);
    if (max_end - plan.makespan_s).abs() > TOL {
        out.push(PlanViolation::Makespan {
            expected: max_end,
            found: plan.makespan_s,
        });
    }
    out
}
