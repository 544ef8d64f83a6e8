use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use crate::mission::TaskId;
use crate::runlog::{Record, RecordBody};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Valid plans over planning attempts.
    pub success_rate: f64,
    /// Mean planning time per attempt.
    pub plan_time_s: f64,
    /// Mean number of subtasks per completed task.
    pub plan_length: f64,
    pub tasks_completed: usize,
    pub tasks_revealed: usize,
    pub spl: f64,
    pub plans: usize,
}

/// Metrics over a run log.
///
/// SPL averages `gt / max(gt, len)` over revealed tasks whose type has a
/// ground-truth length, scoring tasks that never completed as 0. With no
/// such task it is 1.
pub fn compute_metrics(records: &[Record], scenario: &Scenario) -> MetricsReport {
    let mut plans = 0usize;
    let mut valid = 0usize;
    let mut plan_time = 0.0;
    let mut revealed: BTreeMap<&TaskId, &str> = BTreeMap::new();
    let mut completed: BTreeMap<&TaskId, usize> = BTreeMap::new();
    for r in records {
        match &r.body {
            RecordBody::Plan {
                valid: ok, plan_time_s, ..
            } => {
                plans += 1;
                valid += *ok as usize;
                plan_time += plan_time_s;
            }
            RecordBody::TaskRevealed { task_id, task_type, .. } => {
                revealed.insert(task_id, task_type);
            }
            RecordBody::TaskCompleted { task_id, subtasks, .. } => {
                completed.insert(task_id, *subtasks);
            }
            _ => {}
        }
    }
    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    let scored: Vec<f64> = revealed
        .iter()
        .filter_map(|(id, ty)| {
            let gt = *scenario.gt.get(*ty)? as f64;
            Some(completed.get(id).map_or(0.0, |&len| gt / gt.max(len as f64)))
        })
        .collect();
    MetricsReport {
        success_rate: if plans == 0 { 1.0 } else { valid as f64 / plans as f64 },
        plan_time_s: mean(plan_time, plans),
        plan_length: mean(completed.values().sum::<usize>() as f64, completed.len()),
        tasks_completed: completed.len(),
        tasks_revealed: revealed.len(),
        spl: if scored.is_empty() { 1.0 } else { mean(scored.iter().sum(), scored.len()) },
        plans,
    }
}
