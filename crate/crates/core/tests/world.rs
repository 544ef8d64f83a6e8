mod common;

use std::collections::BTreeMap;

use common::{auto_config, fixture, fixture_text, invalid_plans, orchestrator, run_auto};
use dexter_core::geo::{Cell, CellState};
use dexter_core::orchestrator::AbsentOperator;
use dexter_core::runlog::{parse_runlog, RecordBody};
use dexter_core::world::{
    compute_metrics, load_scenario, EventKind, EventSource, MetricsReport, Reveal, ScenarioError, ScriptItem,
};
use proptest::prelude::*;

#[test]
fn hand_computed_metrics() {
    // SR 2 of 3; time (0.5 + 1.5 + 1.0) / 3; length (2 + 5 + 3) / 3;
    // SPL over the three typed tasks with GT: 2/2, 4/5 and 0 for the
    // unfinished one; patrol has no GT and is left out
    let records = parse_runlog(&fixture_text("metrics_log.jsonl")).unwrap();
    let expected: MetricsReport = serde_json::from_str(&fixture_text("metrics_expected.json")).unwrap();
    let got = compute_metrics(&records, &fixture("timeline_mini"));
    assert_eq!(got.plans, expected.plans);
    assert_eq!(got.tasks_completed, expected.tasks_completed);
    assert_eq!(got.tasks_revealed, expected.tasks_revealed);
    for (a, b) in [
        (got.success_rate, expected.success_rate),
        (got.plan_time_s, expected.plan_time_s),
        (got.plan_length, expected.plan_length),
        (got.spl, expected.spl),
    ] {
        assert!((a - b).abs() <= 1e-12, "{got:?}");
    }
}

#[test]
fn empty_log_metrics() {
    let m = compute_metrics(&[], &fixture("timeline_mini"));
    assert_eq!(m.success_rate, 1.0);
    assert_eq!(m.spl, 1.0);
    assert_eq!(m.plans, 0);
}

#[test]
fn fixtures_load_and_mirror_the_fleet() {
    let s = fixture("scenario_i_mini");
    let count = |ty: &str| s.fleet.iter().filter(|r| r.spec.robot_type == ty).count();
    assert_eq!(s.fleet.len(), 8);
    for ty in ["firefighting_ugv", "fire_uav", "transport_ugv", "manipulation_uav"] {
        assert_eq!(count(ty), 2, "{ty}");
    }
    let ii = fixture("scenario_ii_mini");
    assert_eq!(ii.fleet.len(), 8);
    assert!(!ii.map.unknown.is_empty());
    assert!(ii.script.iter().any(|i| matches!(i.reveal, Reveal::WhenCellExplored(_))));
}

#[test]
fn scenario_errors() {
    let mut s = fixture("timeline_mini");
    s.script.push(ScriptItem {
        reveal: Reveal::AtTime(3.0),
        event: EventKind::NewTaskInstance {
            task_type: "suppress_fire".into(),
            cell: Cell::new(14, 5),
        },
    });
    let text = serde_json::to_string(&s).unwrap();
    assert!(matches!(load_scenario(&text), Err(ScenarioError::Invalid(m)) if m.contains("not free")));
    assert!(matches!(load_scenario("{}"), Err(ScenarioError::Schema(_))));
}

#[test]
fn hidden_pocket_is_explored_before_its_reveal() {
    let o = run_auto(&fixture("scenario_ii_mini"));
    let pocket = Cell::new(16, 9);
    let revealed = o
        .records()
        .iter()
        .find(|r| matches!(&r.body, RecordBody::TaskRevealed { cell, .. } if *cell == pocket))
        .expect("pocket task revealed");
    assert!(revealed.t > 0.0);
    assert_eq!(o.state().map.state(pocket), Some(CellState::Free));
    assert!(o.sim().known_map().state(pocket) == Some(CellState::Free));
}

#[derive(Debug, Clone)]
struct Scripted {
    t: f64,
    which: u8,
    cell: Cell,
}

fn scripted() -> impl Strategy<Value = Scripted> {
    (0u32..1200, 0u8..6, 0u32..24, 0u32..16).prop_map(|(t, which, x, y)| Scripted {
        t: t as f64 / 10.0,
        which,
        cell: Cell::new(x, y),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Random scripts on the timeline map: time never runs backwards, each
    /// scripted item fires exactly once, robots stay on free cells and
    /// every plan is valid.
    #[test]
    fn random_scripts_keep_invariants(items in prop::collection::vec(scripted(), 0..8), fail in prop::option::of(0usize..8)) {
        let mut s = fixture("timeline_mini");
        let truth = s.truth_map().unwrap();
        s.script.clear();
        for (k, it) in items.iter().enumerate() {
            if truth.state(it.cell) != Some(CellState::Free) {
                continue;
            }
            let event = match it.which {
                0 | 1 => EventKind::NewTaskInstance { task_type: "suppress_fire".into(), cell: it.cell },
                2 => EventKind::NewPriorityTaskInstance { task_type: "rescue_severe".into(), cell: it.cell },
                3 => EventKind::NewFeatureInstance { feature_id: format!("rescue_station_x{k}"), kind: "rescue_station".into(), cell: it.cell },
                4 => EventKind::NewFeatureType { feature_id: format!("sand_x{k}"), kind: "sand".into(), cell: it.cell },
                _ => EventKind::NewTaskType { task_type: "rescue_mild".into(), cell: it.cell, family: Some("victim".into()), priority_rank: 1 },
            };
            s.script.push(ScriptItem { reveal: Reveal::AtTime(it.t), event });
        }
        if let Some(r) = fail {
            let robot = s.fleet[r].spec.id.clone();
            s.script.push(ScriptItem { reveal: Reveal::AtTime(30.0), event: EventKind::RobotFailure { robot } });
        }
        let mut o = orchestrator(&s, auto_config(&s), Box::new(AbsentOperator));
        while !o.is_finished() {
            o.tick();
            for r in o.sim().robots() {
                prop_assert_eq!(truth.state(r.cell), Some(CellState::Free));
            }
        }
        let records = o.records();
        prop_assert!(records.windows(2).all(|w| w[1].t >= w[0].t));
        let mut last = 0.0;
        let mut fired: BTreeMap<String, usize> = BTreeMap::new();
        for r in records {
            if let RecordBody::Event { event, .. } = &r.body {
                prop_assert!(event.t >= last - 1e-9 && event.t <= r.t + 1e-9);
                last = event.t;
                if event.source == EventSource::Script {
                    *fired.entry(serde_json::to_string(&event.kind).unwrap()).or_default() += 1;
                }
            }
        }
        let mut scripted: BTreeMap<String, usize> = BTreeMap::new();
        for it in &s.script {
            *scripted.entry(serde_json::to_string(&it.event).unwrap()).or_default() += 1;
        }
        // every reveal here is timed and inside the horizon, so each fires
        // exactly once
        prop_assert_eq!(&fired, &scripted);
        prop_assert!(invalid_plans(records).is_empty(), "{:?}", invalid_plans(records));
        prop_assert!(o.sim().time() <= s.horizon_s + 1e-9);
    }
}
