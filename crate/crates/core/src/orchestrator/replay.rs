use std::collections::BTreeMap;

use thiserror::Error;

use super::checkpoint::{ScriptedOperator, AUTO_OPERATOR, FALLBACK_OPERATOR};
use super::engine::{Orchestrator, OrchestratorError};
use crate::runlog::{Record, RecordBody, RunLog};
use crate::strategy::GenerationBackend;
use crate::world::{EventKind, EventSource};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("run log has no run_started record")]
    NoHeader,
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
}

/// Re-runs a logged run: same scenario and configuration, the logged
/// external events injected at their original ticks and the logged operator
/// decisions released at their original times.
pub fn replay(records: &[Record], backend: Box<dyn GenerationBackend>) -> Result<Orchestrator, ReplayError> {
    let (config, scenario) = records
        .iter()
        .find_map(|r| match &r.body {
            RecordBody::RunStarted { config, scenario } => Some((config.clone(), scenario.clone())),
            _ => None,
        })
        .ok_or(ReplayError::NoHeader)?;
    let dt = crate::world::DEFAULT_DT;
    let mut injections: BTreeMap<u64, Vec<EventKind>> = BTreeMap::new();
    for r in records {
        if let RecordBody::Event { event, .. } = &r.body {
            if event.source == EventSource::Injected {
                let tick = (event.t / dt).round() as u64;
                injections.entry(tick).or_default().push(event.kind.clone());
            }
        }
    }
    let decisions = records.iter().filter_map(|r| match &r.body {
        RecordBody::Checkpoint {
            checkpoint_id,
            decision,
            operator,
            ..
        } if operator != AUTO_OPERATOR && operator != FALLBACK_OPERATOR => {
            Some((*checkpoint_id, r.t, decision.clone(), operator.clone()))
        }
        _ => None,
    });
    let operator = Box::new(ScriptedOperator::new(decisions));
    let mut o = Orchestrator::new(&scenario, config, backend, operator, RunLog::new())?;
    let mut tick = 0u64;
    while !o.is_finished() {
        for kind in injections.remove(&tick).unwrap_or_default() {
            o.inject(kind);
        }
        o.tick();
        tick += 1;
    }
    Ok(o)
}

/// Plan digests in log order.
pub fn plan_digests(records: &[Record]) -> Vec<String> {
    records
        .iter()
        .filter_map(|r| match &r.body {
            RecordBody::Plan { digest, .. } => Some(digest.clone()),
            _ => None,
        })
        .collect()
}
