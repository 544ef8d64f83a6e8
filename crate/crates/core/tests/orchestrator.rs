mod common;

use std::sync::{Arc, Mutex};

use common::{auto_config, fixture, invalid_plans, orchestrator, run_auto};
use dexter_core::geo::Cell;
use dexter_core::orchestrator::{
    compute_trigger_stats, plan_digests, replay, route_event, route_for_class, AbsentOperator, CheckpointStage,
    Decision, Mode, Module, Operator, Orchestrator, PendingCheckpoint, RunConfig, FALLBACK_OPERATOR,
};
use dexter_core::runlog::{parse_runlog, RecordBody, RunLog};
use dexter_core::scheduler::FleetPlan;
use dexter_core::strategy::MockBackend;
use dexter_core::world::{EventClass, EventKind, Scenario, SubtaskStatus};
use proptest::prelude::*;
use serde_json::Value;

use Module::{MapUpdate, MisComp, Monitor, SubAll, SubGen};

#[test]
fn routing_table() {
    let expected: [(EventClass, &[Module]); 7] = [
        (EventClass::NewTaskInstance, &[SubAll]),
        (EventClass::NewPriorityTaskInstance, &[MisComp, SubAll]),
        (EventClass::NewTaskType, &[MisComp, SubGen, SubAll]),
        (EventClass::NewFeatureType, &[SubGen, SubAll]),
        (EventClass::NewFeatureInstance, &[MapUpdate, SubAll]),
        (EventClass::SubtaskStatusUpdate, &[Monitor]),
        (EventClass::RobotFailure, &[SubAll]),
    ];
    for (class, modules) in expected {
        assert_eq!(route_for_class(class, false), modules, "{class}");
    }
    assert_eq!(route_for_class(EventClass::SubtaskStatusUpdate, true), [Monitor, SubAll]);
}

fn status(planned: f64, actual: f64) -> EventKind {
    EventKind::SubtaskStatusUpdate {
        task_id: "t#1".into(),
        strategy_id: "s".into(),
        index: 0,
        robot: "r".into(),
        status: SubtaskStatus::Completed,
        planned_s: planned,
        actual_s: actual,
    }
}

fn any_event() -> impl Strategy<Value = EventKind> {
    let cell = (0u32..40, 0u32..40).prop_map(|(x, y)| Cell::new(x, y));
    let name = "[a-z]{1,6}";
    prop_oneof![
        (name, cell.clone()).prop_map(|(task_type, cell)| EventKind::NewTaskInstance { task_type, cell }),
        (name, cell.clone()).prop_map(|(task_type, cell)| EventKind::NewPriorityTaskInstance { task_type, cell }),
        (name, cell.clone(), 0u32..4).prop_map(|(task_type, cell, priority_rank)| EventKind::NewTaskType {
            task_type,
            cell,
            family: None,
            priority_rank
        }),
        (name, name, cell.clone()).prop_map(|(feature_id, kind, cell)| EventKind::NewFeatureType { feature_id, kind, cell }),
        (name, name, cell).prop_map(|(feature_id, kind, cell)| EventKind::NewFeatureInstance { feature_id, kind, cell }),
        (0.1f64..100.0, 0.0f64..300.0).prop_map(|(p, a)| status(p, a)),
        name.prop_map(|robot| EventKind::RobotFailure { robot }),
    ]
}

proptest! {
    #[test]
    fn every_event_has_a_route(kind in any_event()) {
        let route = route_event(&kind);
        let class = kind.class();
        prop_assert!(!route.is_empty());
        let delayed = match &kind {
            EventKind::SubtaskStatusUpdate { planned_s, actual_s, .. } => *actual_s > 1.5 * planned_s,
            _ => false,
        };
        let replans = class != EventClass::SubtaskStatusUpdate || delayed;
        prop_assert_eq!(route.contains(&SubAll), replans);
        prop_assert_eq!(
            route.contains(&SubGen),
            matches!(class, EventClass::NewTaskType | EventClass::NewFeatureType)
        );
        prop_assert_eq!(
            route.contains(&MisComp),
            matches!(class, EventClass::NewTaskType | EventClass::NewPriorityTaskInstance)
        );
    }
}

#[test]
fn delay_threshold() {
    assert_eq!(route_event(&status(10.0, 15.0)), [Monitor]);
    assert_eq!(route_event(&status(10.0, 15.01)), [Monitor, SubAll]);
}

/// The timeline scenario with its script removed.
fn quiet() -> Scenario {
    let mut s = fixture("timeline_mini");
    s.script.clear();
    s
}

#[derive(Clone, Copy, Debug)]
enum Act {
    Approve,
    Reject,
    Garble,
    DelayPlan,
    GhostRobot,
}

/// Approves everything until armed, then applies `act` to the `nth`
/// checkpoint it sees.
#[derive(Clone, Default)]
struct TestOperator(Arc<Mutex<Armed>>);

#[derive(Default)]
struct Armed {
    plan: Option<(usize, Act)>,
    seen: usize,
    latency: f64,
}

impl TestOperator {
    fn arm(&self, nth: usize, act: Act) {
        let mut a = self.0.lock().unwrap();
        a.plan = Some((nth, act));
        a.seen = 0;
    }
}

fn delayed_plan(artifact: &Value, by: f64) -> Value {
    let mut plan: FleetPlan = serde_json::from_value(artifact.clone()).unwrap();
    for list in plan.robots.values_mut() {
        for s in list.iter_mut().filter(|s| !s.fixed) {
            s.start_s += by;
            s.end_s += by;
        }
    }
    plan.makespan_s = plan.subtasks().map(|s| s.end_s).fold(0.0, f64::max);
    serde_json::to_value(plan).unwrap()
}

impl Operator for TestOperator {
    fn poll(&mut self, pending: &PendingCheckpoint, now: f64) -> Option<(Decision, String)> {
        let mut a = self.0.lock().unwrap();
        if now - pending.opened_at < a.latency {
            return None;
        }
        let Some((nth, act)) = a.plan else {
            return Some((Decision::Approved, "tester".into()));
        };
        let i = a.seen;
        a.seen += 1;
        let act = if i == nth { act } else { Act::Approve };
        let decision = match act {
            Act::Approve => Decision::Approved,
            Act::Reject => Decision::Rejected { reason: "no".into() },
            Act::Garble => Decision::Edited {
                artifact: serde_json::json!({"garbage": true}),
            },
            Act::DelayPlan if pending.stage == CheckpointStage::Plan => Decision::Edited {
                artifact: delayed_plan(&pending.artifact, 5.0),
            },
            Act::GhostRobot if pending.stage == CheckpointStage::Plan => {
                let mut v = pending.artifact.clone();
                let robots = v["robots"].as_object_mut().unwrap();
                let first = robots.keys().find(|k| !robots[*k].as_array().unwrap().is_empty()).cloned().unwrap();
                let moved = robots.remove(&first).unwrap();
                robots.insert("ghost".into(), moved);
                Decision::Edited { artifact: v }
            }
            Act::DelayPlan | Act::GhostRobot => Decision::Approved,
        };
        Some((decision, "tester".into()))
    }
}

fn interactive(s: &Scenario, op: &TestOperator) -> Orchestrator {
    let config = RunConfig {
        mode: Mode::Interactive,
        run_until_horizon: s.script.is_empty(),
        ..auto_config(s)
    };
    orchestrator(s, config, Box::new(op.clone()))
}

fn settle(o: &mut Orchestrator) {
    for _ in 0..5 {
        o.tick();
    }
}

fn injected(choice: usize) -> EventKind {
    match choice {
        0 => EventKind::NewTaskInstance {
            task_type: "suppress_fire".into(),
            cell: Cell::new(10, 4),
        },
        1 => EventKind::NewPriorityTaskInstance {
            task_type: "rescue_severe".into(),
            cell: Cell::new(18, 13),
        },
        2 => EventKind::NewTaskType {
            task_type: "rescue_mild".into(),
            cell: Cell::new(20, 10),
            family: Some("victim".into()),
            priority_rank: 1,
        },
        3 => EventKind::NewFeatureType {
            feature_id: "sand_1".into(),
            kind: "sand".into(),
            cell: Cell::new(12, 2),
        },
        4 => EventKind::NewFeatureInstance {
            feature_id: "rescue_station_2".into(),
            kind: "rescue_station".into(),
            cell: Cell::new(21, 13),
        },
        _ => EventKind::RobotFailure { robot: "cart1".into() },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// A pipeline that fails at any checkpoint leaves the planning state
    /// exactly as it was.
    #[test]
    fn rejection_leaves_state_untouched(choice in 0usize..6, nth in 0usize..3, garble in any::<bool>()) {
        let s = quiet();
        let op = TestOperator::default();
        let mut o = interactive(&s, &op);
        settle(&mut o);
        let before = o.state().clone();
        let records = o.records().len();
        op.arm(nth, if garble { Act::Garble } else { Act::Reject });
        o.inject(injected(choice));
        o.tick();
        prop_assert!(o.pending_checkpoint().is_none());
        let rolled_back = o.records()[records..].iter().any(|r| matches!(r.body, RecordBody::Rollback { .. }));
        let checkpoints = o.records()[records..].iter().filter(|r| matches!(r.body, RecordBody::Checkpoint { .. })).count();
        prop_assert_eq!(rolled_back, nth < checkpoints);
        if rolled_back {
            prop_assert_eq!(o.state(), &before);
        } else {
            prop_assert_ne!(o.state(), &before);
        }
    }
}

#[test]
fn absent_operator_times_out_to_auto_fallback() {
    let s = quiet();
    let mut o = orchestrator(
        &s,
        RunConfig {
            mode: Mode::Interactive,
            ..auto_config(&s)
        },
        Box::new(AbsentOperator),
    );
    let first = o.pending_checkpoint().cloned().expect("initial layered checkpoint");
    assert_eq!(first.stage, CheckpointStage::Layered);
    while o.sim().time() < 29.85 {
        o.tick();
        assert_eq!(o.pending_checkpoint().map(|p| p.checkpoint_id), Some(first.checkpoint_id));
    }
    o.tick();
    let resolved = o
        .records()
        .iter()
        .find_map(|r| match &r.body {
            RecordBody::Checkpoint {
                checkpoint_id,
                operator,
                latency_s,
                decision,
                ..
            } if *checkpoint_id == first.checkpoint_id => Some((r.t, operator.clone(), *latency_s, decision.clone())),
            _ => None,
        })
        .expect("checkpoint resolved");
    assert_eq!(resolved.1, FALLBACK_OPERATOR);
    assert!((resolved.0 - 30.0).abs() < 1e-6 && (resolved.2 - 30.0).abs() < 1e-6);
    assert_eq!(resolved.3, Decision::Approved);
}

#[test]
fn checkpoint_opened_records_carry_the_artifact() {
    let s = quiet();
    let op = TestOperator::default();
    let o = interactive(&s, &op);
    let opened: Vec<_> = o
        .records()
        .iter()
        .filter_map(|r| match &r.body {
            RecordBody::CheckpointOpened { stage, artifact, .. } => Some((*stage, artifact.clone())),
            _ => None,
        })
        .collect();
    assert_eq!(opened.iter().map(|o| o.0).collect::<Vec<_>>(), [CheckpointStage::Layered, CheckpointStage::Plan]);
    assert!(opened[0].1["strategies"]["suppress_fire"].is_array());
}

fn fire_with(act: Act) -> (Orchestrator, usize, dexter_core::orchestrator::PlanningState) {
    let s = quiet();
    let op = TestOperator::default();
    let mut o = interactive(&s, &op);
    settle(&mut o);
    let before = o.state().clone();
    let records = o.records().len();
    // an instance event has only the plan checkpoint
    op.arm(0, act);
    o.inject(injected(0));
    o.tick();
    (o, records, before)
}

#[test]
fn valid_edit_is_committed() {
    let (o, from, _) = fire_with(Act::DelayPlan);
    let new = &o.records()[from..];
    let decision = new
        .iter()
        .find_map(|r| match &r.body {
            RecordBody::Checkpoint { decision, .. } => Some(decision.clone()),
            _ => None,
        })
        .unwrap();
    let Decision::Edited { artifact } = decision else { panic!("expected an edit") };
    let edited: FleetPlan = serde_json::from_value(artifact).unwrap();
    assert_eq!(o.state().plan, edited);
    let first = edited.subtasks().map(|s| s.start_s).fold(f64::INFINITY, f64::min);
    assert!(first >= o.sim().time() + 5.0 - 1e-9);
    assert!(!new.iter().any(|r| matches!(r.body, RecordBody::Rollback { .. })));
}

#[test]
fn invalid_edit_is_refused() {
    let (o, from, before) = fire_with(Act::GhostRobot);
    let reason = o.records()[from..]
        .iter()
        .find_map(|r| match &r.body {
            RecordBody::Rollback { reason, .. } => Some(reason.clone()),
            _ => None,
        })
        .expect("rollback");
    assert!(reason.contains("edited plan is invalid") && reason.contains("ghost"), "{reason}");
    assert_eq!(o.state(), &before);
}

#[test]
fn instance_of_unknown_type_is_rolled_back() {
    let s = quiet();
    let op = TestOperator::default();
    let mut o = interactive(&s, &op);
    settle(&mut o);
    let before = o.state().clone();
    o.inject(EventKind::NewTaskInstance {
        task_type: "no_such_type".into(),
        cell: Cell::new(5, 5),
    });
    o.tick();
    assert!(o.records().iter().any(|r| matches!(&r.body, RecordBody::Rollback { reason, .. } if reason.contains("not part of the mission"))));
    assert_eq!(o.state(), &before);
}

#[test]
fn events_queue_behind_a_blocked_checkpoint() {
    let s = quiet();
    let op = TestOperator::default();
    op.0.lock().unwrap().latency = 3.0;
    let mut o = interactive(&s, &op);
    for _ in 0..80 {
        o.tick();
    }
    assert!(o.pending_checkpoint().is_none());
    o.inject(injected(0));
    o.tick();
    assert!(o.pending_checkpoint().is_some());
    o.inject(injected(4));
    o.inject(injected(3));
    o.tick();
    assert_eq!(o.snapshot().queued_events, 2);
    for _ in 0..200 {
        o.tick();
    }
    let starts: Vec<EventClass> = o
        .records()
        .iter()
        .filter_map(|r| match &r.body {
            RecordBody::Trigger { class, modules, .. } if modules != &[Monitor] => Some(*class),
            _ => None,
        })
        .collect();
    assert_eq!(
        starts,
        [EventClass::NewTaskInstance, EventClass::NewFeatureInstance, EventClass::NewFeatureType]
    );
    // one pipeline at a time: trigger, its checkpoints, then the next trigger
    let mut open = false;
    for r in o.records() {
        match &r.body {
            RecordBody::Trigger { modules, .. } if modules != &[Monitor] => {
                assert!(!open);
                open = true;
            }
            RecordBody::Checkpoint { stage: CheckpointStage::Plan, .. } | RecordBody::Rollback { .. } => open = false,
            _ => {}
        }
    }
}

#[test]
fn trigger_stats_edge_cases() {
    let empty = compute_trigger_stats(&[]);
    assert_eq!(empty.events, 0);
    assert_eq!(empty.llm_call_count, 0);
    assert_eq!(empty.llm_reduction, 0.0);
    assert!(empty.percentages.values().all(|&p| p == 0.0));

    let mut log = RunLog::new();
    for i in 0..4 {
        log.append(
            i as f64,
            RecordBody::Trigger {
                event_seq: i,
                class: EventClass::NewTaskType,
                modules: route_for_class(EventClass::NewTaskType, false),
            },
        );
    }
    let st = compute_trigger_stats(log.records());
    assert_eq!(st.percentages[&MisComp], 100.0);
    assert_eq!(st.percentages[&SubGen], 100.0);
    assert_eq!(st.llm_call_count, 4);
    assert_eq!(st.llm_reduction, 0.0);
}

#[test]
fn identical_runs_produce_identical_logs() {
    for name in ["timeline_mini", "scenario_ii_mini"] {
        let s = fixture(name);
        let a = run_auto(&s).log().to_jsonl();
        let b = run_auto(&s).log().to_jsonl();
        assert!(a == b, "{name}: logs differ");
        let mut other = auto_config(&s);
        other.seed += 1;
        let mut c = orchestrator(&s, other, Box::new(AbsentOperator));
        c.run_to_end();
        if s.execution_jitter > 0.0 {
            assert_ne!(a, c.log().to_jsonl(), "{name}: seed has no effect");
        }
    }
}

#[test]
fn replay_reproduces_plans_with_injections_and_operator_edits() {
    let s = fixture("timeline_mini");
    let op = TestOperator::default();
    op.0.lock().unwrap().latency = 1.5;
    let mut o = interactive(&s, &op);
    for _ in 0..150 {
        o.tick();
    }
    o.inject(EventKind::RobotFailure { robot: "ugv_f2".into() });
    op.arm(0, Act::DelayPlan);
    for _ in 0..200 {
        o.tick();
    }
    o.inject(injected(0));
    o.run_to_end();
    let text = o.log().to_jsonl();
    let records = parse_runlog(&text).unwrap();
    assert!(records.iter().any(|r| matches!(&r.body, RecordBody::Checkpoint { decision: Decision::Edited { .. }, .. })));
    let again = replay(&records, Box::new(MockBackend { rules: s.mock_rules.clone() })).unwrap();
    assert_eq!(plan_digests(again.records()), plan_digests(&records));
    assert_eq!(again.log().to_jsonl(), text);
}

#[test]
fn runlog_round_trips_and_is_sequenced() {
    let o = run_auto(&fixture("scenario_ii_mini"));
    let text = o.log().to_jsonl();
    let records = parse_runlog(&text).unwrap();
    assert_eq!(records, o.records());
    assert!(records.windows(2).all(|w| w[1].seq == w[0].seq + 1 && w[1].t >= w[0].t));
    assert!(invalid_plans(&records).is_empty());
    assert!(matches!(records.last().unwrap().body, RecordBody::RunFinished { .. }));
    assert!(text.ends_with('\n') && text.lines().count() == records.len());
}
