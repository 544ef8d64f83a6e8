use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::route::Module;
use crate::runlog::{Record, RecordBody};

/// Module trigger counts over the adaptation events of a run. Status updates
/// that only reach the monitor are counted apart and do not enter the
/// percentages or the baseline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriggerStats {
    pub events: usize,
    pub monitor_only: usize,
    pub counts: BTreeMap<Module, usize>,
    pub percentages: BTreeMap<Module, f64>,
    pub llm_call_count: usize,
    pub baseline_llm_call_count: usize,
    pub llm_reduction: f64,
}

pub fn compute_trigger_stats(records: &[Record]) -> TriggerStats {
    let mut s = TriggerStats::default();
    for m in Module::COUNTED {
        s.counts.insert(m, 0);
    }
    for r in records {
        let RecordBody::Trigger { modules, .. } = &r.body else { continue };
        if modules.as_slice() == [Module::Monitor] {
            s.monitor_only += 1;
            continue;
        }
        s.events += 1;
        for m in modules {
            if let Some(c) = s.counts.get_mut(m) {
                *c += 1;
            }
        }
        if modules.contains(&Module::SubGen) {
            s.llm_call_count += 1;
        }
    }
    s.baseline_llm_call_count = s.events;
    for (m, c) in &s.counts {
        let pct = if s.events == 0 { 0.0 } else { 100.0 * *c as f64 / s.events as f64 };
        s.percentages.insert(*m, pct);
    }
    s.llm_reduction = if s.events == 0 {
        0.0
    } else {
        1.0 - s.llm_call_count as f64 / s.baseline_llm_call_count as f64
    };
    s
}
