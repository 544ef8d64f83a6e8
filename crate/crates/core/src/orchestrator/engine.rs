use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::checkpoint::{
    auto_decision, CheckpointStage, Decision, Mode, Operator, PendingCheckpoint, AUTO_OPERATOR, CHECKPOINT_TIMEOUT_S,
    FALLBACK_OPERATOR,
};
use super::route::{route_event, Module};
use super::stats::{compute_trigger_stats, TriggerStats};
use crate::geo::{CellState, GridMap};
use crate::mission::{build_task_poset, validate_poset, MissionError, PosetError, TaskId, TaskPoset};
use crate::runlog::{digest, Record, RecordBody, RunLog};
use crate::scheduler::{bnb_search, validate_plan, FleetPlan, PlanningInput, RobotState, SearchConfig};
use crate::strategy::{
    run_generation_pipeline, GenerationBackend, HistoryEntry, LayeredDag, MetaPolicy, RobotSpec, SceneDescription,
};
use crate::world::{
    compute_metrics, Event, EventKind, MetricsReport, RobotView, Scenario, ScenarioError, Simulation,
};

/// Simulated seconds charged per search node by the virtual clock.
pub const VIRTUAL_SECONDS_PER_NODE: f64 = 1e-6;

/// Scene histories passed to the generator keep this many recent entries.
const HISTORY_LEN: usize = 10;

/// How planning time is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanClock {
    /// Wall-clock seconds.
    Wall,
    /// Search nodes times [`VIRTUAL_SECONDS_PER_NODE`]; reproducible.
    #[default]
    Virtual,
}

impl PlanClock {
    pub fn measure(self, wall: Duration, nodes: u64) -> f64 {
        match self {
            PlanClock::Wall => wall.as_secs_f64(),
            PlanClock::Virtual => nodes as f64 * VIRTUAL_SECONDS_PER_NODE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub backend: String,
    pub seed: u64,
    pub max_nodes: u64,
    #[serde(default)]
    pub paper_lb: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_s: Option<f64>,
    pub checkpoint_timeout_s: f64,
    pub clock: PlanClock,
    /// Keep ticking after the fleet goes idle, e.g. while a service waits
    /// for injected events.
    #[serde(default)]
    pub run_until_horizon: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Auto,
            backend: "mock".into(),
            seed: 0,
            max_nodes: SearchConfig::default().max_nodes,
            paper_lb: false,
            budget_s: None,
            checkpoint_timeout_s: CHECKPOINT_TIMEOUT_S,
            clock: PlanClock::Virtual,
            run_until_horizon: false,
        }
    }
}

impl RunConfig {
    pub fn search(&self) -> SearchConfig {
        SearchConfig {
            max_nodes: self.max_nodes,
            time_limit: self.budget_s.map(Duration::from_secs_f64),
            paper_lb: self.paper_lb,
        }
    }
}

/// Everything an adaptation pipeline may change; a rejected checkpoint
/// restores it wholesale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningState {
    pub poset: TaskPoset,
    pub layered: LayeredDag,
    pub map: GridMap,
    pub policy: MetaPolicy,
    pub plan: FleetPlan,
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error(transparent)]
    Poset(#[from] PosetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Insert,
    MisComp,
    MapUpdate,
    Generate,
    Execution,
    Plan,
}

fn steps_for(route: &[Module], kind: &EventKind) -> Vec<Step> {
    let mut out = Vec::new();
    if matches!(kind, EventKind::NewTaskInstance { .. }) {
        out.push(Step::Insert);
    }
    if matches!(kind, EventKind::NewFeatureType { .. }) {
        out.push(Step::MapUpdate);
    }
    for m in route {
        match m {
            Module::MisComp => out.push(Step::MisComp),
            Module::SubGen => out.push(Step::Generate),
            Module::MapUpdate => out.push(Step::MapUpdate),
            Module::Monitor if route.contains(&Module::SubAll) => out.push(Step::Execution),
            Module::Monitor => {}
            Module::SubAll => out.push(Step::Plan),
        }
    }
    out
}

struct ActivePipeline {
    event_seq: Option<u64>,
    event: Option<Event>,
    steps: VecDeque<Step>,
    working: PlanningState,
    new_tasks: Vec<TaskId>,
    plan_robots: Vec<RobotState>,
    pending: Option<PendingCheckpoint>,
}

/// What the service shows under `/state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub t: f64,
    pub horizon_s: f64,
    pub finished: bool,
    pub mode: Mode,
    pub robots: Vec<RobotView>,
    pub pending_checkpoint: Option<PendingCheckpoint>,
    pub queued_events: usize,
    pub tasks: usize,
    pub tasks_completed: Vec<TaskId>,
    pub features: BTreeMap<String, crate::geo::Feature>,
    pub unknown_cells: usize,
    pub records: usize,
}

/// Owns the planning state, the simulation and the run log, and routes
/// every event through its adaptation pipeline.
pub struct Orchestrator {
    config: RunConfig,
    scenario: Scenario,
    robots: Vec<RobotSpec>,
    nominal_types: BTreeSet<String>,
    state: PlanningState,
    sim: Simulation,
    log: RunLog,
    backend: Box<dyn GenerationBackend>,
    operator: Box<dyn Operator>,
    queue: VecDeque<(u64, Event)>,
    active: Option<ActivePipeline>,
    next_checkpoint: u64,
    finished: bool,
}

enum Advance {
    Blocked,
    Done,
}

impl Orchestrator {
    /// Sets up the run at t = 0 and plans the initial mission.
    pub fn new(
        scenario: &Scenario,
        config: RunConfig,
        backend: Box<dyn GenerationBackend>,
        operator: Box<dyn Operator>,
        log: RunLog,
    ) -> Result<Self, OrchestratorError> {
        let mut scenario = scenario.clone();
        scenario.seed = config.seed;
        let sim = Simulation::new(&scenario)?;
        let spec = scenario.mission.to_spec()?;
        let poset = build_task_poset(&spec, &[])?;
        let nominal_types = poset.tasks.iter().map(|t| t.task_type.clone()).collect();
        let state = PlanningState {
            poset,
            layered: LayeredDag::default(),
            map: sim.known_map().clone(),
            policy: scenario.initial_policy.clone(),
            plan: FleetPlan::default(),
            history: Vec::new(),
        };
        let mut o = Self {
            robots: scenario.robot_specs(),
            config,
            scenario,
            nominal_types,
            state,
            sim,
            log,
            backend,
            operator,
            queue: VecDeque::new(),
            active: None,
            next_checkpoint: 0,
            finished: false,
        };
        o.log.append(
            0.0,
            RecordBody::RunStarted {
                config: o.config.clone(),
                scenario: Box::new(o.scenario.clone()),
            },
        );
        o.active = Some(ActivePipeline {
            event_seq: None,
            event: None,
            steps: VecDeque::from([Step::Generate, Step::Plan]),
            working: o.state.clone(),
            new_tasks: Vec::new(),
            plan_robots: Vec::new(),
            pending: None,
        });
        o.pump();
        Ok(o)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn state(&self) -> &PlanningState {
        &self.state
    }

    pub fn sim(&self) -> &Simulation {
        &self.sim
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut RunLog {
        &mut self.log
    }

    pub fn records(&self) -> &[Record] {
        self.log.records()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn pending_checkpoint(&self) -> Option<&PendingCheckpoint> {
        self.active.as_ref().and_then(|p| p.pending.as_ref())
    }

    pub fn metrics(&self) -> MetricsReport {
        compute_metrics(self.log.records(), &self.scenario)
    }

    pub fn trigger_stats(&self) -> TriggerStats {
        compute_trigger_stats(self.log.records())
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            t: self.sim.time(),
            horizon_s: self.sim.horizon(),
            finished: self.finished,
            mode: self.config.mode,
            robots: self.sim.robots(),
            pending_checkpoint: self.pending_checkpoint().cloned(),
            queued_events: self.queue.len(),
            tasks: self.state.poset.tasks.len(),
            tasks_completed: self.sim.completed_tasks().keys().cloned().collect(),
            features: self.state.map.features.clone(),
            unknown_cells: self.state.map.cells().filter(|(_, s)| *s == CellState::Unknown).count(),
            records: self.log.records().len(),
        }
    }

    /// Queues an external event; it is stamped and handled on the next tick.
    pub fn inject(&mut self, kind: EventKind) {
        self.sim.inject_event(kind);
    }

    /// Advances the simulation one tick and reacts to what happened.
    pub fn tick(&mut self) {
        if self.finished {
            return;
        }
        let events = self.sim.step();
        let now = self.sim.time();

        let explored = self.sim.take_newly_explored();
        if !explored.is_empty() {
            let known = self.sim.known_map();
            let states: Vec<_> = explored.iter().map(|&c| (c, known.state(c).unwrap_or(CellState::Obstacle))).collect();
            for map in std::iter::once(&mut self.state.map).chain(self.active.as_mut().map(|p| &mut p.working.map)) {
                for &(c, s) in &states {
                    let _ = map.set_state(c, s);
                }
            }
        }

        for e in events {
            let route = route_event(&e.kind);
            let seq = self.log.append(
                now,
                RecordBody::Event {
                    event: e.clone(),
                    route: route.clone(),
                },
            );
            if route == [Module::Monitor] {
                self.log.append(
                    now,
                    RecordBody::Trigger {
                        event_seq: seq,
                        class: e.class(),
                        modules: route,
                    },
                );
            } else {
                self.queue.push_back((seq, e));
            }
        }

        for c in self.sim.take_completions() {
            let task_type = self
                .state
                .poset
                .task(&c.task_id)
                .map(|n| n.task_type.clone())
                .unwrap_or_default();
            self.log.append(
                now,
                RecordBody::TaskCompleted {
                    task_id: c.task_id,
                    task_type,
                    strategy_id: c.strategy_id,
                    subtasks: c.subtasks,
                },
            );
        }

        self.pump();

        let idle = !self.config.run_until_horizon
            && self.queue.is_empty()
            && self.active.is_none()
            && self.sim.is_quiescent();
        if self.sim.is_finished() || idle {
            self.finish();
        }
    }

    /// Ticks until the run ends.
    pub fn run_to_end(&mut self) {
        while !self.finished {
            self.tick();
        }
    }

    /// Writes the closing record and flushes the log. Idempotent.
    pub fn finish(&mut self) {
        if self.finished {
            return;
        }
        self.finished = true;
        let metrics = self.metrics();
        let stats = self.trigger_stats();
        self.log.append(self.sim.time(), RecordBody::RunFinished { metrics, stats });
        if let Err(e) = self.log.flush() {
            tracing::error!(error = %e, "flushing run log failed");
        }
    }

    fn pump(&mut self) {
        loop {
            if self.active.is_none() {
                let Some((seq, event)) = self.queue.pop_front() else { break };
                self.start_pipeline(seq, event);
            }
            if let Advance::Blocked = self.advance() {
                break;
            }
        }
    }

    fn start_pipeline(&mut self, seq: u64, event: Event) {
        let route = route_event(&event.kind);
        self.log.append(
            self.sim.time(),
            RecordBody::Trigger {
                event_seq: seq,
                class: event.class(),
                modules: route.clone(),
            },
        );
        let mut working = self.state.clone();
        working.history.push(HistoryEntry {
            t: event.t,
            text: event.kind.describe(),
        });
        self.active = Some(ActivePipeline {
            event_seq: Some(seq),
            steps: steps_for(&route, &event.kind).into(),
            event: Some(event),
            working,
            new_tasks: Vec::new(),
            plan_robots: Vec::new(),
            pending: None,
        });
    }

    fn advance(&mut self) -> Advance {
        let Some(mut p) = self.active.take() else { return Advance::Done };
        let now = self.sim.time();
        loop {
            if let Some(pending) = &p.pending {
                let decision = match self.config.mode {
                    Mode::Auto => Some((auto_decision(&pending.violations), AUTO_OPERATOR.to_string())),
                    Mode::Interactive => self.operator.poll(pending, now).or_else(|| {
                        (now - pending.opened_at >= self.config.checkpoint_timeout_s - 1e-9)
                            .then(|| (auto_decision(&pending.violations), FALLBACK_OPERATOR.to_string()))
                    }),
                };
                let Some((decision, operator)) = decision else {
                    self.active = Some(p);
                    return Advance::Blocked;
                };
                if let Err(reason) = self.resolve(&mut p, decision, operator) {
                    self.rollback(p.event_seq, reason);
                    return Advance::Done;
                }
                continue;
            }
            let Some(step) = p.steps.pop_front() else {
                self.commit(p);
                return Advance::Done;
            };
            match self.run_step(&mut p, step) {
                Ok(None) => {}
                Ok(Some((stage, artifact, violations))) => {
                    let id = self.next_checkpoint;
                    self.next_checkpoint += 1;
                    if self.config.mode == Mode::Interactive {
                        self.log.append(
                            now,
                            RecordBody::CheckpointOpened {
                                checkpoint_id: id,
                                stage,
                                event_seq: p.event_seq,
                                artifact: artifact.clone(),
                                violations: violations.clone(),
                            },
                        );
                    }
                    p.pending = Some(PendingCheckpoint {
                        checkpoint_id: id,
                        stage,
                        event_seq: p.event_seq,
                        artifact,
                        violations,
                        opened_at: now,
                    });
                }
                Err(reason) => {
                    self.rollback(p.event_seq, reason);
                    return Advance::Done;
                }
            }
        }
    }

    fn rollback(&mut self, event_seq: Option<u64>, reason: String) {
        tracing::info!(?event_seq, %reason, "pipeline rolled back");
        self.log.append(self.sim.time(), RecordBody::Rollback { event_seq, reason });
    }

    fn commit(&mut self, p: ActivePipeline) {
        self.state = p.working;
        self.sim.install_plan(&self.state.plan, &self.state.poset, &self.state.layered);
        let now = self.sim.time();
        for id in p.new_tasks {
            let Some(node) = self.state.poset.task(&id) else { continue };
            let Some(cell) = node.site else { continue };
            let body = RecordBody::TaskRevealed {
                task_id: id.clone(),
                task_type: node.task_type.clone(),
                cell,
            };
            self.log.append(now, body);
        }
    }

    /// Validator output for a stage artifact.
    fn violations(&self, p: &ActivePipeline, stage: CheckpointStage) -> Vec<String> {
        let w = &p.working;
        match stage {
            CheckpointStage::Poset => validate_poset(&w.poset).iter().map(ToString::to_string).collect(),
            CheckpointStage::Layered => {
                let kinds = w.map.feature_kinds();
                let mut v = w.layered.validate();
                for s in w.layered.strategies.values().flatten() {
                    if let Err(e) = s.validate_against(&self.robots, &kinds) {
                        v.push(format!("strategy `{}`: {e}", s.strategy_id));
                    }
                }
                v
            }
            CheckpointStage::Plan => validate_plan(&w.plan, &w.poset, &w.layered, &p.plan_robots, &w.map)
                .iter()
                .map(ToString::to_string)
                .collect(),
            CheckpointStage::Execution => Vec::new(),
        }
    }

    fn resolve(&mut self, p: &mut ActivePipeline, decision: Decision, operator: String) -> Result<(), String> {
        let pending = p.pending.take().expect("resolve needs a pending checkpoint");
        let now = self.sim.time();
        let mut outcome = Ok(());
        match &decision {
            Decision::Approved if !pending.violations.is_empty() => {
                outcome = Err(format!("approval refused: {}", pending.violations.join("; ")));
            }
            Decision::Approved => {}
            Decision::Rejected { reason } => outcome = Err(format!("rejected at {} checkpoint: {reason}", pending.stage)),
            Decision::Edited { artifact } => {
                let before = p.working.clone();
                outcome = apply_edit(&mut p.working, pending.stage, artifact.clone());
                if outcome.is_ok() {
                    let v = self.violations(p, pending.stage);
                    if !v.is_empty() {
                        p.working = before;
                        outcome = Err(format!("edited {} is invalid: {}", pending.stage, v.join("; ")));
                    }
                }
            }
        }
        self.log.append(
            now,
            RecordBody::Checkpoint {
                checkpoint_id: pending.checkpoint_id,
                stage: pending.stage,
                event_seq: pending.event_seq,
                decision,
                violations: pending.violations,
                operator,
                latency_s: now - pending.opened_at,
            },
        );
        outcome
    }

    fn reactive_types(&self, poset: &TaskPoset) -> Vec<String> {
        poset
            .catalog
            .types
            .keys()
            .filter(|t| !self.nominal_types.contains(*t))
            .cloned()
            .collect()
    }

    #[allow(clippy::type_complexity)]
    fn run_step(
        &mut self,
        p: &mut ActivePipeline,
        step: Step,
    ) -> Result<Option<(CheckpointStage, Value, Vec<String>)>, String> {
        let now = self.sim.time();
        let kind = p.event.as_ref().map(|e| e.kind.clone());
        let label = p.event_seq.map(|s| format!("event:{s}"));
        match step {
            Step::Insert | Step::MisComp => {
                let w = &mut p.working;
                let (task_type, cell) = match kind {
                    Some(EventKind::NewTaskInstance { task_type, cell })
                    | Some(EventKind::NewPriorityTaskInstance { task_type, cell }) => (task_type, cell),
                    Some(EventKind::NewTaskType {
                        task_type,
                        cell,
                        family,
                        priority_rank,
                    }) => {
                        w.poset.register_task_type(&task_type, family.as_deref(), priority_rank);
                        (task_type, cell)
                    }
                    other => return Err(format!("{step:?} cannot handle {other:?}")),
                };
                if w.map.state(cell) != Some(CellState::Free) {
                    return Err(format!("task site {cell} is not a known free cell"));
                }
                let rank = w
                    .poset
                    .catalog
                    .types
                    .get(&task_type)
                    .map(|i| i.priority_rank)
                    .ok_or_else(|| format!("task type `{task_type}` is not part of the mission"))?;
                let id = w
                    .poset
                    .insert_instance(&task_type, rank, Some(cell), label)
                    .map_err(|e| e.to_string())?;
                p.new_tasks.push(id);
                if step == Step::Insert {
                    return Ok(None);
                }
                if matches!(p.event.as_ref().map(|e| &e.kind), Some(EventKind::NewPriorityTaskInstance { .. }))
                    && w.layered.strategies_for(&task_type).is_empty()
                {
                    let family = &w.poset.catalog.types[&task_type].family;
                    let donors: Vec<&str> = w
                        .poset
                        .catalog
                        .types
                        .iter()
                        .filter(|(t, i)| &i.family == family && t.as_str() != task_type)
                        .map(|(t, _)| t.as_str())
                        .collect();
                    if let Some(copy) = w.layered.replicate_for(&task_type, &donors) {
                        w.layered.insert(copy);
                    }
                }
                let artifact = serde_json::to_value(&p.working.poset).unwrap_or(Value::Null);
                Ok(Some((CheckpointStage::Poset, artifact, self.violations(p, CheckpointStage::Poset))))
            }
            Step::MapUpdate => {
                let (id, kind, cell) = match kind {
                    Some(EventKind::NewFeatureType { feature_id, kind, cell })
                    | Some(EventKind::NewFeatureInstance { feature_id, kind, cell }) => (feature_id, kind, cell),
                    other => return Err(format!("map update cannot handle {other:?}")),
                };
                let map = &mut p.working.map;
                if !map.features.contains_key(&id) {
                    map.add_feature(id, kind, cell).map_err(|e| e.to_string())?;
                }
                Ok(None)
            }
            Step::Generate => {
                debug_assert!(p.event.as_ref().is_none_or(|e| route_event(&e.kind).contains(&Module::SubGen)));
                let w = &mut p.working;
                let tasks = match kind {
                    Some(EventKind::NewTaskType { task_type, .. }) => vec![task_type],
                    _ => self.reactive_types(&w.poset),
                };
                let scene = SceneDescription {
                    tasks: tasks.clone(),
                    resources: w.map.feature_kinds(),
                    history: w.history.iter().rev().take(HISTORY_LEN).rev().cloned().collect(),
                    free_text: String::new(),
                };
                let result = run_generation_pipeline(&scene, &self.robots, &w.policy, &w.layered, self.backend.as_ref());
                let (body, outcome) = match result {
                    Ok(out) => {
                        let new_strategies: Vec<String> =
                            out.delta.strategies.values().flatten().map(|s| s.strategy_id.clone()).collect();
                        w.layered.merge(out.delta);
                        w.policy = out.policy;
                        let body = RecordBody::PipelineRun {
                            event_seq: p.event_seq,
                            tasks,
                            resources: scene.resources,
                            backend_calls: out.backend_calls,
                            new_strategies,
                            policy_version: w.policy.version,
                            error: None,
                        };
                        (body, Ok(()))
                    }
                    Err(e) => {
                        let body = RecordBody::PipelineRun {
                            event_seq: p.event_seq,
                            tasks,
                            resources: scene.resources,
                            backend_calls: e.attempts,
                            new_strategies: Vec::new(),
                            policy_version: w.policy.version,
                            error: Some(e.to_string()),
                        };
                        (body, Err(format!("strategy generation failed: {e}")))
                    }
                };
                self.log.append(now, body);
                outcome?;
                let artifact = serde_json::to_value(&p.working.layered).unwrap_or(Value::Null);
                Ok(Some((CheckpointStage::Layered, artifact, self.violations(p, CheckpointStage::Layered))))
            }
            Step::Execution => {
                let artifact = serde_json::to_value(p.event.as_ref()).unwrap_or(Value::Null);
                Ok(Some((CheckpointStage::Execution, artifact, Vec::new())))
            }
            Step::Plan => {
                let robots = self.sim.robot_states();
                let progress = self.sim.planning_progress();
                let w = &mut p.working;
                let input = PlanningInput {
                    poset: &w.poset,
                    layered: &w.layered,
                    robots: &robots,
                    map: &w.map,
                    now,
                    progress: &progress,
                };
                let started = Instant::now();
                let result = bnb_search(&input, &self.config.search());
                let wall = started.elapsed();
                p.plan_robots = robots;
                match result {
                    Ok(plan) => {
                        w.plan = plan;
                        let violations = self.violations(p, CheckpointStage::Plan);
                        let plan = &p.working.plan;
                        self.log.append(
                            now,
                            RecordBody::Plan {
                                event_seq: p.event_seq,
                                valid: violations.is_empty(),
                                plan_time_s: self.config.clock.measure(wall, plan.nodes_expanded),
                                makespan_s: plan.makespan_s,
                                optimal: plan.optimal,
                                nodes: plan.nodes_expanded,
                                tasks: plan.selection.len(),
                                subtasks: plan.subtasks().count(),
                                deferred: plan.deferred.clone(),
                                violations: violations.clone(),
                                digest: digest(plan),
                            },
                        );
                        let artifact = serde_json::to_value(plan).unwrap_or(Value::Null);
                        Ok(Some((CheckpointStage::Plan, artifact, violations)))
                    }
                    Err(e) => {
                        self.log.append(
                            now,
                            RecordBody::Plan {
                                event_seq: p.event_seq,
                                valid: false,
                                plan_time_s: self.config.clock.measure(wall, 0),
                                makespan_s: 0.0,
                                optimal: false,
                                nodes: 0,
                                tasks: 0,
                                subtasks: 0,
                                deferred: Vec::new(),
                                violations: vec![e.to_string()],
                                digest: String::new(),
                            },
                        );
                        Err(format!("planning failed: {e}"))
                    }
                }
            }
        }
    }
}

fn apply_edit(w: &mut PlanningState, stage: CheckpointStage, artifact: Value) -> Result<(), String> {
    let bad = |e: serde_json::Error| format!("edited {stage} does not parse: {e}");
    match stage {
        CheckpointStage::Poset => w.poset = serde_json::from_value(artifact).map_err(bad)?,
        CheckpointStage::Layered => w.layered = serde_json::from_value(artifact).map_err(bad)?,
        CheckpointStage::Plan => w.plan = serde_json::from_value(artifact).map_err(bad)?,
        CheckpointStage::Execution => {}
    }
    Ok(())
}

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator")
            .field("t", &self.sim.time())
            .field("finished", &self.finished)
            .field("queued", &self.queue.len())
            .finish()
    }
}
