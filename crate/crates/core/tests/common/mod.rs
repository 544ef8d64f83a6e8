//! Random scheduling instances and a brute-force reference solver.

#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use dexter_core::geo::{Cell, CellState, GridMap};
use dexter_core::mission::{TaskId, TaskPoset};
use dexter_core::scheduler::{FleetPlan, PlanningInput, RobotState};
use dexter_core::orchestrator::{AbsentOperator, Operator, Orchestrator, RunConfig};
use dexter_core::runlog::{Record, RecordBody, RunLog};
use dexter_core::strategy::{LayeredDag, MockBackend, RobotSpec, Skill, StrategyDag, SubtaskSpec};
use dexter_core::world::{load_scenario, EventKind, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub poset: TaskPoset,
    pub layered: LayeredDag,
    pub robots: Vec<RobotState>,
    pub map: GridMap,
}

impl Case {
    pub fn input(&self) -> PlanningInput<'_> {
        PlanningInput {
            poset: &self.poset,
            layered: &self.layered,
            robots: &self.robots,
            map: &self.map,
            now: 0.0,
            progress: &[],
        }
    }
}

const SKILLS: [&str; 3] = ["s1", "s2", "s3"];
const TYPES: [&str; 2] = ["ta", "tb"];

fn free_cells(map: &GridMap) -> Vec<Cell> {
    map.cells().filter(|(_, s)| *s == CellState::Free).map(|(c, _)| c).collect()
}

/// Instance with at most 3 robots, 6 subtasks per selection and 2
/// strategies per task, on a small grid with a few obstacles.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        if let Some(c) = try_case(&mut rng) {
            return c;
        }
    }
}

fn try_case(rng: &mut ChaCha8Rng) -> Option<Case> {
    let mut map = GridMap::new(5, 5, 1.0).unwrap();
    for _ in 0..rng.random_range(0..4) {
        let c = Cell::new(rng.random_range(0..5), rng.random_range(0..5));
        map.set_state(c, CellState::Obstacle).unwrap();
    }
    let free = free_cells(&map);
    // keep the free space connected
    let reach = oracle_hops(&map, free[0]);
    if free.iter().any(|c| !reach.contains_key(c)) {
        return None;
    }
    let pick = |rng: &mut ChaCha8Rng| free[rng.random_range(0..free.len())];
    for k in 0..rng.random_range(1..=2) {
        let c = pick(rng);
        let _ = map.add_feature(format!("depot{k}"), "depot", c);
    }

    let n_robots = rng.random_range(1..=3);
    let mut robots = Vec::new();
    for i in 0..n_robots {
        let robot_type = TYPES[rng.random_range(0..TYPES.len())];
        let mut skills = Vec::new();
        for s in SKILLS {
            if rng.random_bool(0.6) {
                skills.push(Skill {
                    name: s.into(),
                    duration_s: rng.random_range(1..=5) as f64,
                });
            }
        }
        if skills.is_empty() {
            skills.push(Skill { name: "s1".into(), duration_s: 2.0 });
        }
        robots.push(RobotState {
            spec: RobotSpec {
                id: format!("r{i}"),
                robot_type: robot_type.into(),
                skills,
                velocity_mps: [1.0, 2.0][rng.random_range(0..2)],
                description: String::new(),
            },
            location: pick(rng),
            available_at: [0.0, 0.0, 1.5][rng.random_range(0..3)],
            failed: false,
        });
    }

    let n_tasks = rng.random_range(1..=3);
    let mut budget = 6usize;
    let mut poset = TaskPoset::default();
    let mut layered = LayeredDag::default();
    let mut ids = Vec::new();
    for t in 0..n_tasks {
        let left = n_tasks - t - 1;
        let cap = budget.saturating_sub(left).min(3);
        if cap == 0 {
            break;
        }
        let tt = format!("type{t}");
        let n_strat = rng.random_range(1..=2);
        let mut largest = 0;
        for k in 0..n_strat {
            let n_sub = rng.random_range(1..=cap);
            largest = largest.max(n_sub);
            let mut subtasks: Vec<SubtaskSpec> = Vec::new();
            for i in 0..n_sub {
                let r = &robots[rng.random_range(0..robots.len())].spec;
                let action = r.skills[rng.random_range(0..r.skills.len())].name.clone();
                let dependencies: Vec<usize> = (0..i).filter(|_| rng.random_bool(0.4)).collect();
                let mut bind = None;
                if i > 0 && rng.random_bool(0.25) {
                    let o = rng.random_range(0..i);
                    let other: &SubtaskSpec = &subtasks[o];
                    if other.robot_type == r.robot_type && r.has_skill(&other.action) {
                        bind = Some(o);
                    }
                }
                subtasks.push(SubtaskSpec {
                    index: i,
                    robot_type: r.robot_type.clone(),
                    action,
                    target: if rng.random_bool(0.3) { "depot" } else { "task" }.into(),
                    done_by_same_robot_as: bind,
                    dependencies,
                    duration_override: None,
                });
            }
            layered.insert(StrategyDag {
                strategy_id: format!("{tt}_s{k}"),
                task_type: tt.clone(),
                subtasks,
            });
        }
        budget -= largest;
        poset.register_task_type(&tt, None, 0);
        ids.push(poset.insert_instance(&tt, 0, Some(pick(rng)), None).unwrap());
    }
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            if rng.random_bool(0.3) {
                poset.precedence.insert((ids[i].clone(), ids[j].clone()));
            } else if rng.random_bool(0.2) {
                poset.exclusion.insert((ids[i].clone(), ids[j].clone()));
            }
        }
    }
    Some(Case { poset, layered, robots, map })
}

/// Plain breadth-first search, independent of the library's.
pub fn oracle_hops(map: &GridMap, from: Cell) -> BTreeMap<Cell, u32> {
    let mut dist = BTreeMap::new();
    if map.state(from) != Some(CellState::Free) {
        return dist;
    }
    dist.insert(from, 0);
    let mut q = VecDeque::from([from]);
    while let Some(c) = q.pop_front() {
        let d = dist[&c];
        let mut next = Vec::new();
        if c.x > 0 {
            next.push(Cell::new(c.x - 1, c.y));
        }
        if c.y > 0 {
            next.push(Cell::new(c.x, c.y - 1));
        }
        next.push(Cell::new(c.x + 1, c.y));
        next.push(Cell::new(c.x, c.y + 1));
        for n in next {
            if map.state(n) == Some(CellState::Free) && !dist.contains_key(&n) {
                dist.insert(n, d + 1);
                q.push_back(n);
            }
        }
    }
    dist
}

/// Nearest feature of the given kind by hop count, ties by feature id.
pub fn oracle_target(map: &GridMap, site: Cell, target: &str) -> Cell {
    if target == "task" {
        return site;
    }
    let hops = oracle_hops(map, site);
    map.features_of_kind(target)
        .filter_map(|(id, c)| hops.get(&c).map(|&d| (d, id.to_string(), c)))
        .min()
        .map(|x| x.2)
        .expect("unreachable target")
}

struct OItem {
    task: usize,
    deps: Vec<usize>,
    bind: Option<usize>,
    cell: Cell,
    /// (robot, duration) pairs
    caps: Vec<(usize, f64)>,
}

/// Exhaustive minimum makespan: every strategy selection, every
/// assignment, every per-robot order and every orientation of exclusive
/// pairs on different robots. Timing is the least fixed point of the
/// constraint system.
pub fn oracle_makespan(case: &Case) -> Option<f64> {
    let tasks: Vec<&TaskId> = case.poset.tasks.iter().map(|t| &t.id).collect();
    let strategies: Vec<Vec<&StrategyDag>> = case
        .poset
        .tasks
        .iter()
        .map(|t| case.layered.strategies_for(&t.task_type).iter().collect())
        .collect();
    let pos = |id: &TaskId| tasks.iter().position(|t| *t == id).unwrap();
    let preds: Vec<Vec<usize>> = (0..tasks.len())
        .map(|l| {
            case.poset
                .precedence
                .iter()
                .filter(|(_, b)| pos(b) == l)
                .map(|(a, _)| pos(a))
                .collect()
        })
        .collect();
    let excl: Vec<(usize, usize)> = case.poset.exclusion.iter().map(|(a, b)| (pos(a), pos(b))).collect();

    let mut hops: BTreeMap<Cell, BTreeMap<Cell, u32>> = BTreeMap::new();
    let mut travel = |a: Cell, b: Cell, v: f64| -> f64 {
        let h = hops.entry(a).or_insert_with(|| oracle_hops(&case.map, a));
        h.get(&b).map_or(f64::INFINITY, |&d| d as f64 * case.map.cell_m / v)
    };

    let mut best: Option<f64> = None;
    let mut sel = vec![0usize; tasks.len()];
    loop {
        // build items of this selection
        let mut items: Vec<OItem> = Vec::new();
        for (t, &k) in sel.iter().enumerate() {
            let s = strategies[t][k];
            let base = items.len();
            let site = case.poset.tasks[t].site.unwrap();
            for st in &s.subtasks {
                let caps = case
                    .robots
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.spec.robot_type == st.robot_type)
                    .filter_map(|(i, r)| r.spec.skill_duration(&st.action).map(|d| (i, d)))
                    .collect();
                items.push(OItem {
                    task: t,
                    deps: st.dependencies.iter().map(|d| base + d).collect(),
                    bind: st.done_by_same_robot_as.map(|o| base + o),
                    cell: oracle_target(&case.map, site, &st.target),
                    caps,
                });
            }
        }
        if let Some(m) = best_for_items(case, &items, &preds, &excl, &mut travel) {
            best = Some(best.map_or(m, |b: f64| b.min(m)));
        }
        // next selection
        let mut i = 0;
        loop {
            if i == sel.len() {
                return best;
            }
            sel[i] += 1;
            if sel[i] < strategies[i].len() {
                break;
            }
            sel[i] = 0;
            i += 1;
        }
    }
}

fn best_for_items(
    case: &Case,
    items: &[OItem],
    preds: &[Vec<usize>],
    excl: &[(usize, usize)],
    travel: &mut impl FnMut(Cell, Cell, f64) -> f64,
) -> Option<f64> {
    let n = items.len();
    let mut best: Option<f64> = None;
    let mut assign = vec![0usize; n];
    let mut choice = vec![0usize; n];
    loop {
        let ok = (0..n).all(|x| !items[x].caps.is_empty());
        if !ok {
            return None;
        }
        for x in 0..n {
            assign[x] = items[x].caps[choice[x]].0;
        }
        let bound_ok = (0..n).all(|x| items[x].bind.is_none_or(|o| assign[o] == assign[x]));
        if bound_ok {
            let per_robot: Vec<Vec<usize>> = (0..case.robots.len())
                .map(|r| (0..n).filter(|&x| assign[x] == r).collect())
                .collect();
            let pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                .filter(|&(a, b)| {
                    assign[a] != assign[b]
                        && excl.iter().any(|&(p, q)| {
                            (items[a].task, items[b].task) == (p, q) || (items[a].task, items[b].task) == (q, p)
                        })
                })
                .collect();
            let durs: Vec<f64> = (0..n).map(|x| items[x].caps[choice[x]].1).collect();
            for_each_order(&per_robot, &mut |orders| {
                for mask in 0..(1u32 << pairs.len()) {
                    if let Some(m) = timing(case, items, preds, &assign, &durs, orders, &pairs, mask, travel) {
                        best = Some(best.map_or(m, |b: f64| b.min(m)));
                    }
                }
            });
        }
        // next assignment
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            choice[i] += 1;
            if choice[i] < items[i].caps.len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

fn for_each_order(per_robot: &[Vec<usize>], f: &mut impl FnMut(&[Vec<usize>])) {
    fn rec(i: usize, per_robot: &[Vec<usize>], acc: &mut Vec<Vec<usize>>, f: &mut impl FnMut(&[Vec<usize>])) {
        if i == per_robot.len() {
            f(acc);
            return;
        }
        let mut perm = per_robot[i].clone();
        perm.sort_unstable();
        loop {
            acc.push(perm.clone());
            rec(i + 1, per_robot, acc, f);
            acc.pop();
            if !next_permutation(&mut perm) {
                break;
            }
        }
    }
    rec(0, per_robot, &mut Vec::new(), f);
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

#[allow(clippy::too_many_arguments)]
fn timing(
    case: &Case,
    items: &[OItem],
    preds: &[Vec<usize>],
    assign: &[usize],
    durs: &[f64],
    orders: &[Vec<usize>],
    pairs: &[(usize, usize)],
    mask: u32,
    travel: &mut impl FnMut(Cell, Cell, f64) -> f64,
) -> Option<f64> {
    let n = items.len();
    let horizon: f64 = 1e4;
    let mut start = vec![0.0f64; n];
    let mut passes = 0;
    loop {
        passes += 1;
        if passes > 3 * n + 10 {
            return None;
        }
        let mut changed = false;
        for x in 0..n {
            let r = assign[x];
            let robot = &case.robots[r];
            let v = robot.spec.velocity_mps;
            let order = &orders[r];
            let k = order.iter().position(|&y| y == x).unwrap();
            let mut s: f64 = if k == 0 {
                robot.available_at + travel(robot.location, items[x].cell, v)
            } else {
                let p = order[k - 1];
                start[p] + durs[p] + travel(items[p].cell, items[x].cell, v)
            };
            for &d in &items[x].deps {
                s = s.max(start[d] + durs[d]);
            }
            for &h in &preds[items[x].task] {
                let m = (0..n).filter(|&y| items[y].task == h).map(|y| start[y]).fold(f64::INFINITY, f64::min);
                if m.is_finite() {
                    s = s.max(m);
                }
            }
            for (bit, &(a, b)) in pairs.iter().enumerate() {
                let (first, second) = if mask & (1 << bit) == 0 { (a, b) } else { (b, a) };
                if second == x {
                    s = s.max(start[first] + durs[first]);
                }
            }
            // same robot: exclusive items are ordered by the robot sequence
            if s > start[x] + 1e-12 {
                start[x] = s;
                changed = true;
            }
            if start[x] > horizon {
                return None;
            }
        }
        if !changed {
            break;
        }
    }
    Some((0..n).map(|x| start[x] + durs[x]).fold(0.0, f64::max))
}

pub fn plan_items(plan: &FleetPlan) -> usize {
    plan.subtasks().count()
}

pub fn fixture_text(name: &str) -> String {
    let path = format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

pub fn fixture(name: &str) -> Scenario {
    load_scenario(&fixture_text(&format!("{name}.json"))).unwrap()
}

pub fn orchestrator(s: &Scenario, config: RunConfig, operator: Box<dyn Operator>) -> Orchestrator {
    let backend = Box::new(MockBackend { rules: s.mock_rules.clone() });
    Orchestrator::new(s, config, backend, operator, RunLog::new()).unwrap()
}

pub fn auto_config(s: &Scenario) -> RunConfig {
    RunConfig {
        seed: s.seed,
        ..RunConfig::default()
    }
}

/// Runs a scenario to the end in auto mode.
pub fn run_auto(s: &Scenario) -> Orchestrator {
    let mut o = orchestrator(s, auto_config(s), Box::new(AbsentOperator));
    o.run_to_end();
    o
}

/// Time of the last task completion, if any.
pub fn last_completion(records: &[Record]) -> Option<f64> {
    records
        .iter()
        .filter(|r| matches!(r.body, RecordBody::TaskCompleted { .. }))
        .map(|r| r.t)
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))
}

/// Start times of subtasks, recovered from completion reports.
pub fn subtask_starts(records: &[Record]) -> Vec<(TaskId, usize, f64)> {
    records
        .iter()
        .filter_map(|r| match &r.body {
            RecordBody::Event { event, .. } => match &event.kind {
                EventKind::SubtaskStatusUpdate {
                    task_id, index, actual_s, ..
                } => Some((task_id.clone(), *index, event.t - actual_s)),
                _ => None,
            },
            _ => None,
        })
        .collect()
}

/// Plan records that are not valid.
pub fn invalid_plans(records: &[Record]) -> Vec<&Record> {
    records
        .iter()
        .filter(|r| match &r.body {
            RecordBody::Plan { valid, violations, .. } => !valid || !violations.is_empty(),
            _ => false,
        })
        .collect()
}
