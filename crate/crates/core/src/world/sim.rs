use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::event::{Event, EventKind, EventSource, SubtaskStatus};
use super::scenario::{Reveal, Scenario, ScenarioError};
use crate::geo::{Cell, CellState, GridMap};
use crate::mission::{TaskId, TaskPoset};
use crate::scheduler::{FleetPlan, PlannedSubtask, ProgressItem, RobotState};
use crate::strategy::{LayeredDag, RobotSpec};

pub const DEFAULT_DT: f64 = 0.1;
pub const SENSING_RADIUS: f64 = 3.0;
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Activity {
    Idle,
    Moving { next: Cell, arrive: f64 },
    Working { task_id: TaskId, index: usize, end: f64 },
}

#[derive(Debug, Clone)]
struct SimRobot {
    spec: RobotSpec,
    cell: Cell,
    failed: bool,
    activity: Activity,
    queue: VecDeque<PlannedSubtask>,
    /// Start of the current leg and hops done on it, so arrival times are
    /// computed by multiplication rather than accumulation.
    leg: (f64, u32),
}

/// Public view of one robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotView {
    pub id: String,
    pub robot_type: String,
    pub cell: Cell,
    pub failed: bool,
    pub activity: Activity,
    pub queued: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCompletion {
    pub task_id: TaskId,
    pub strategy_id: String,
    pub subtasks: usize,
    pub t: f64,
}

/// Execution constraints taken from the poset and layered DAG of the
/// installed plan.
#[derive(Debug, Clone, Default)]
struct Constraints {
    deps: BTreeMap<(TaskId, usize), Vec<usize>>,
    preds: BTreeMap<TaskId, Vec<TaskId>>,
    excl: BTreeMap<TaskId, Vec<TaskId>>,
    total: BTreeMap<TaskId, (String, usize)>,
    planned: BTreeSet<TaskId>,
}

/// Deterministic discrete-event simulation of the fleet on the grid.
#[derive(Debug, Clone)]
pub struct Simulation {
    ticks: u64,
    dt: f64,
    horizon: f64,
    truth: GridMap,
    known: GridMap,
    explored: BTreeMap<Cell, f64>,
    newly_explored: Vec<Cell>,
    robots: Vec<SimRobot>,
    script: Vec<(Reveal, EventKind, bool)>,
    injected: VecDeque<EventKind>,
    progress: Vec<ProgressItem>,
    constraints: Constraints,
    completed: BTreeMap<TaskId, TaskCompletion>,
    new_completions: Vec<TaskCompletion>,
    disturbances: Vec<super::scenario::Disturbance>,
    jitter: f64,
    rng: ChaCha8Rng,
}

fn cell_dist(a: Cell, b: Cell) -> f64 {
    a.euclidean(b)
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let truth = scenario.truth_map()?;
        let known = scenario.initial_map()?;
        let robots = scenario
            .fleet
            .iter()
            .map(|r| SimRobot {
                spec: r.spec.clone(),
                cell: r.start,
                failed: false,
                activity: Activity::Idle,
                queue: VecDeque::new(),
                leg: (0.0, 0),
            })
            .collect();
        let mut sim = Self {
            ticks: 0,
            dt: DEFAULT_DT,
            horizon: scenario.horizon_s,
            truth,
            known,
            explored: BTreeMap::new(),
            newly_explored: Vec::new(),
            robots,
            script: scenario.script.iter().map(|s| (s.reveal.clone(), s.event.clone(), false)).collect(),
            injected: VecDeque::new(),
            progress: Vec::new(),
            constraints: Constraints::default(),
            completed: BTreeMap::new(),
            new_completions: Vec::new(),
            disturbances: scenario.disturbances.clone(),
            jitter: scenario.execution_jitter,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
        };
        // cells that are known from the start count as explored at t = 0
        let known_cells: Vec<Cell> = sim.known.cells().filter(|(_, s)| *s != CellState::Unknown).map(|(c, _)| c).collect();
        for c in known_cells {
            sim.explored.insert(c, 0.0);
        }
        for i in 0..sim.robots.len() {
            sim.sense(i, 0.0);
        }
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.ticks as f64 * self.dt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Current map as far as it has been explored.
    pub fn known_map(&self) -> &GridMap {
        &self.known
    }

    /// Cells explored since the last call.
    pub fn take_newly_explored(&mut self) -> Vec<Cell> {
        std::mem::take(&mut self.newly_explored)
    }

    pub fn take_completions(&mut self) -> Vec<TaskCompletion> {
        std::mem::take(&mut self.new_completions)
    }

    pub fn completed_tasks(&self) -> &BTreeMap<TaskId, TaskCompletion> {
        &self.completed
    }

    pub fn progress(&self) -> &[ProgressItem] {
        &self.progress
    }

    pub fn robots(&self) -> Vec<RobotView> {
        self.robots
            .iter()
            .map(|r| RobotView {
                id: r.spec.id.clone(),
                robot_type: r.spec.robot_type.clone(),
                cell: r.cell,
                failed: r.failed,
                activity: r.activity.clone(),
                queued: r.queue.len(),
            })
            .collect()
    }

    /// Robot states as seen by the planner at the current time.
    pub fn robot_states(&self) -> Vec<RobotState> {
        let now = self.time();
        self.robots
            .iter()
            .map(|r| {
                let (location, available_at) = match &r.activity {
                    Activity::Moving { next, arrive } => (*next, *arrive),
                    Activity::Working { task_id, index, .. } => {
                        let planned = self
                            .progress
                            .iter()
                            .find(|p| &p.task_id == task_id && p.index == *index)
                            .map_or(now, |p| p.end_s);
                        (r.cell, planned.max(now))
                    }
                    Activity::Idle => (r.cell, now),
                };
                RobotState {
                    spec: r.spec.clone(),
                    location,
                    available_at,
                    failed: r.failed,
                }
            })
            .collect()
    }

    /// Progress as the planner should see it: in-flight items whose planned
    /// end has passed are assumed to end now.
    pub fn planning_progress(&self) -> Vec<ProgressItem> {
        let now = self.time();
        self.progress
            .iter()
            .map(|p| {
                let mut p = p.clone();
                if !p.completed {
                    p.end_s = p.end_s.max(now);
                }
                p
            })
            .collect()
    }

    /// Everything scripted has been revealed and the fleet has nothing left
    /// to do.
    pub fn is_quiescent(&self) -> bool {
        self.script.iter().all(|s| s.2)
            && self.injected.is_empty()
            && self
                .robots
                .iter()
                .all(|r| r.failed || (r.queue.is_empty() && r.activity == Activity::Idle))
    }

    pub fn is_finished(&self) -> bool {
        self.time() >= self.horizon - EPS
    }

    /// Queues an event for the next step.
    pub fn inject_event(&mut self, kind: EventKind) {
        self.injected.push_back(kind);
    }

    /// Replaces the robots' queues with the plan's not-yet-started subtasks.
    pub fn install_plan(&mut self, plan: &FleetPlan, poset: &TaskPoset, layered: &LayeredDag) {
        let mut c = Constraints::default();
        for (task, sid) in &plan.selection {
            if let Some(s) = layered.strategy(sid) {
                for st in &s.subtasks {
                    c.deps.insert((task.clone(), st.index), st.dependencies.clone());
                }
                c.total.insert(task.clone(), (sid.clone(), s.subtasks.len()));
            }
            c.planned.insert(task.clone());
        }
        for (a, b) in &poset.precedence {
            c.preds.entry(b.clone()).or_default().push(a.clone());
        }
        for (a, b) in &poset.exclusion {
            c.excl.entry(a.clone()).or_default().push(b.clone());
            c.excl.entry(b.clone()).or_default().push(a.clone());
        }
        for p in &self.progress {
            c.planned.insert(p.task_id.clone());
            if !c.total.contains_key(&p.task_id) {
                if let Some(t) = self.constraints.total.get(&p.task_id) {
                    c.total.insert(p.task_id.clone(), t.clone());
                }
            }
        }
        for (k, d) in &self.constraints.deps {
            if !c.deps.contains_key(k) && self.progress.iter().any(|p| p.task_id == k.0) {
                c.deps.insert(k.clone(), d.clone());
            }
        }
        self.constraints = c;
        for r in &mut self.robots {
            r.queue.clear();
            if r.failed {
                continue;
            }
            if let Some(list) = plan.robots.get(&r.spec.id) {
                // a plan approved late may list work that started meanwhile
                let fresh = |s: &&PlannedSubtask| {
                    !s.fixed
                        && !self.completed.contains_key(&s.task_id)
                        && !self
                            .progress
                            .iter()
                            .any(|p| p.task_id == s.task_id && (p.index == s.index || p.strategy_id != s.strategy_id))
                };
                r.queue.extend(list.iter().filter(fresh).cloned());
            }
        }
    }

    fn sense(&mut self, robot: usize, t: f64) {
        let at = self.robots[robot].cell;
        let r = SENSING_RADIUS as i64;
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (at.x as i64 + dx, at.y as i64 + dy);
                if x < 0 || y < 0 {
                    continue;
                }
                let c = Cell::new(x as u32, y as u32);
                if !self.truth.in_bounds(c) || cell_dist(at, c) > SENSING_RADIUS + EPS || self.explored.contains_key(&c) {
                    continue;
                }
                self.explored.insert(c, t);
                if self.known.state(c) == Some(CellState::Unknown) {
                    let truth = self.truth.state(c).unwrap_or(CellState::Obstacle);
                    let _ = self.known.set_state(c, truth);
                    self.newly_explored.push(c);
                }
            }
        }
    }

    fn duration_factor(&mut self, robot: &str, action: &str) -> f64 {
        let mut f = self
            .disturbances
            .iter()
            .find(|d| d.robot.as_deref().is_none_or(|r| r == robot) && d.action.as_deref().is_none_or(|a| a == action))
            .map_or(1.0, |d| d.factor);
        if self.jitter > 0.0 {
            f *= 1.0 + self.rng.random_range(-self.jitter..=self.jitter);
        }
        f
    }

    fn started(&self, task: &TaskId) -> bool {
        self.completed.contains_key(task) || self.progress.iter().any(|p| &p.task_id == task)
    }

    fn may_start(&self, item: &PlannedSubtask) -> bool {
        let c = &self.constraints;
        let deps_done = c.deps.get(&(item.task_id.clone(), item.index)).is_none_or(|deps| {
            deps.iter().all(|d| {
                self.progress
                    .iter()
                    .any(|p| p.task_id == item.task_id && p.index == *d && p.completed)
            })
        });
        let preds_ok = c
            .preds
            .get(&item.task_id)
            .is_none_or(|ps| ps.iter().all(|p| !c.planned.contains(p) || self.started(p)));
        let excl_ok = c.excl.get(&item.task_id).is_none_or(|es| {
            !self.progress.iter().any(|p| !p.completed && es.contains(&p.task_id))
        });
        deps_done && preds_ok && excl_ok
    }

    /// Lets idle robots depart or start work at `now`; returns true if
    /// anything changed.
    fn advance_idle(&mut self, now: f64) -> bool {
        let mut changed = false;
        for i in 0..self.robots.len() {
            let r = &self.robots[i];
            if r.failed || r.activity != Activity::Idle {
                continue;
            }
            let Some(front) = r.queue.front().cloned() else { continue };
            if r.cell != front.cell {
                let Some(path) = self.known.shortest_path(r.cell, front.cell) else { continue };
                let step = self.known.cell_m / r.spec.velocity_mps;
                let r = &mut self.robots[i];
                r.leg = (now, 1);
                r.activity = Activity::Moving {
                    next: path[1],
                    arrive: now + step,
                };
                changed = true;
                continue;
            }
            if now + EPS < front.start_s || !self.may_start(&front) {
                continue;
            }
            let planned = front.end_s - front.start_s;
            let actual = planned * self.duration_factor(&front.robot, &front.action);
            let r = &mut self.robots[i];
            r.queue.pop_front();
            r.activity = Activity::Working {
                task_id: front.task_id.clone(),
                index: front.index,
                end: now + actual,
            };
            self.progress.push(ProgressItem {
                task_id: front.task_id.clone(),
                strategy_id: front.strategy_id.clone(),
                index: front.index,
                action: front.action.clone(),
                robot: front.robot.clone(),
                start_s: now,
                end_s: now + planned,
                cell: front.cell,
                completed: false,
            });
            changed = true;
        }
        changed
    }

    /// Earliest pending transition strictly after `now`.
    fn next_transition(&self, now: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        let mut consider = |t: f64| {
            if t > now + EPS {
                best = Some(best.map_or(t, |b: f64| b.min(t)));
            }
        };
        for r in &self.robots {
            if r.failed {
                continue;
            }
            match &r.activity {
                Activity::Moving { arrive, .. } => consider(*arrive),
                Activity::Working { end, .. } => consider(*end),
                Activity::Idle => {
                    if let Some(f) = r.queue.front() {
                        if f.cell == r.cell && f.start_s > now + EPS && self.may_start(f) {
                            consider(f.start_s);
                        }
                    }
                }
            }
        }
        for (rev, _, done) in &self.script {
            if let (Reveal::AtTime(t), false) = (rev, done) {
                consider(*t);
            }
        }
        best
    }

    fn apply_failure(&mut self, robot: &str) {
        let Some(i) = self.robots.iter().position(|r| r.spec.id == robot) else { return };
        // unfinished tasks the robot worked on start over
        let lost: BTreeSet<TaskId> = self
            .progress
            .iter()
            .filter(|p| p.robot == robot && !self.completed.contains_key(&p.task_id))
            .map(|p| p.task_id.clone())
            .collect();
        self.progress.retain(|p| !lost.contains(&p.task_id));
        for r in &mut self.robots {
            if matches!(&r.activity, Activity::Working { task_id, .. } if lost.contains(task_id)) {
                r.activity = Activity::Idle;
            }
            r.queue.retain(|s| !lost.contains(&s.task_id));
        }
        let r = &mut self.robots[i];
        if let Activity::Moving { next, .. } = r.activity {
            // stop on the cell it was entering
            r.cell = next;
        }
        r.failed = true;
        r.activity = Activity::Idle;
        r.queue.clear();
    }

    /// Processes every transition at exactly `now`.
    fn fire_transitions(&mut self, now: f64, out: &mut Vec<Event>) {
        for i in 0..self.robots.len() {
            if self.robots[i].failed {
                continue;
            }
            match self.robots[i].activity.clone() {
                Activity::Moving { next, arrive } if (arrive - now).abs() <= EPS => {
                    let step = self.known.cell_m / self.robots[i].spec.velocity_mps;
                    self.robots[i].cell = next;
                    self.robots[i].activity = Activity::Idle;
                    self.sense(i, now);
                    let r = &self.robots[i];
                    if let Some(front) = r.queue.front() {
                        if front.cell != r.cell {
                            if let Some(path) = self.known.shortest_path(r.cell, front.cell) {
                                let (t0, k) = r.leg;
                                let r = &mut self.robots[i];
                                r.leg = (t0, k + 1);
                                r.activity = Activity::Moving {
                                    next: path[1],
                                    arrive: t0 + (k + 1) as f64 * step,
                                };
                            }
                        }
                    }
                }
                Activity::Working { task_id, index, end } if (end - now).abs() <= EPS => {
                    self.robots[i].activity = Activity::Idle;
                    let Some(p) = self
                        .progress
                        .iter_mut()
                        .find(|p| p.task_id == task_id && p.index == index && !p.completed)
                    else {
                        continue;
                    };
                    let planned = p.end_s - p.start_s;
                    p.completed = true;
                    p.end_s = now;
                    let actual = now - p.start_s;
                    let p = p.clone();
                    out.push(Event {
                        t: now,
                        source: EventSource::Sim,
                        kind: EventKind::SubtaskStatusUpdate {
                            task_id: p.task_id.clone(),
                            strategy_id: p.strategy_id.clone(),
                            index: p.index,
                            robot: p.robot.clone(),
                            status: SubtaskStatus::Completed,
                            planned_s: planned,
                            actual_s: actual,
                        },
                    });
                    self.check_task_done(&p.task_id, now);
                }
                _ => {}
            }
        }
        for k in 0..self.script.len() {
            let (rev, ev, done) = &self.script[k];
            let t = match rev {
                Reveal::AtTime(t) if !done && *t <= now + EPS => *t,
                _ => continue,
            };
            let ev = ev.clone();
            self.script[k].2 = true;
            if let EventKind::RobotFailure { robot } = &ev {
                self.apply_failure(robot);
            }
            out.push(Event {
                t,
                source: EventSource::Script,
                kind: ev,
            });
        }
    }

    fn check_task_done(&mut self, task: &TaskId, now: f64) {
        if self.completed.contains_key(task) {
            return;
        }
        let Some((sid, total)) = self.constraints.total.get(task).cloned() else { return };
        let done = self
            .progress
            .iter()
            .filter(|p| &p.task_id == task && p.completed && p.strategy_id == sid)
            .count();
        if done == total {
            let c = TaskCompletion {
                task_id: task.clone(),
                strategy_id: sid,
                subtasks: total,
                t: now,
            };
            self.completed.insert(task.clone(), c.clone());
            self.new_completions.push(c);
        }
    }

    /// Advances the clock by one tick and returns the events that occurred,
    /// ordered by time.
    pub fn step(&mut self) -> Vec<Event> {
        let t0 = self.time();
        let t1 = (self.ticks + 1) as f64 * self.dt;
        let mut out = Vec::new();

        while let Some(kind) = self.injected.pop_front() {
            if let EventKind::RobotFailure { robot } = &kind {
                self.apply_failure(robot);
            }
            out.push(Event {
                t: t0,
                source: EventSource::Injected,
                kind,
            });
        }

        let mut now = t0;
        if self.ticks == 0 {
            self.fire_transitions(now, &mut out);
        }
        loop {
            while self.advance_idle(now) {}
            match self.next_transition(now) {
                Some(t) if t <= t1 + EPS => {
                    now = t;
                    self.fire_transitions(now, &mut out);
                }
                _ => break,
            }
        }
        self.ticks += 1;

        for k in 0..self.script.len() {
            let (rev, ev, done) = &self.script[k];
            if *done {
                continue;
            }
            if let Reveal::WhenCellExplored(c) = rev {
                if let Some(&t) = self.explored.get(c) {
                    out.push(Event {
                        t,
                        source: EventSource::Script,
                        kind: ev.clone(),
                    });
                    self.script[k].2 = true;
                }
            }
        }
        out.sort_by(|a, b| a.t.total_cmp(&b.t));
        out
    }
}
