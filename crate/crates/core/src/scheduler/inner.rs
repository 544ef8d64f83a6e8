//! Exact scheduling of a fixed strategy selection.
//!
//! The search enumerates dispatch sequences of (ready subtask, capable robot)
//! pairs, each dispatched at its earliest feasible start given everything
//! dispatched before it. Every semi-active schedule is reachable this way, so
//! exhausting the tree yields the minimum makespan.

use std::time::Instant;

use super::instance::{topo_positions, Instance};

const EPS: f64 = 1e-9;

/// Node and wall-clock allowance shared by every search of one planning call.
#[derive(Debug, Clone)]
pub struct Budget {
    pub nodes_left: u64,
    pub deadline: Option<Instant>,
    pub used: u64,
}

impl Budget {
    pub fn nodes(n: u64) -> Self {
        Self {
            nodes_left: n,
            deadline: None,
            used: 0,
        }
    }

    fn take(&mut self) -> bool {
        if self.nodes_left == 0 {
            return false;
        }
        if let Some(d) = self.deadline {
            if self.used.is_multiple_of(1024) && Instant::now() >= d {
                self.nodes_left = 0;
                return false;
            }
        }
        self.nodes_left -= 1;
        self.used += 1;
        true
    }

    pub fn exhausted(&self) -> bool {
        self.nodes_left == 0
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Item {
    pub task: usize,
    pub local: usize,
    pub cell: usize,
    pub caps: Vec<(usize, f64)>,
    pub deps: Vec<usize>,
    pub succ: Vec<usize>,
    pub release: f64,
    pub group: usize,
    pub excl: Vec<usize>,
    pub preds: Vec<usize>,
    pub min_dur: f64,
    pub tail: f64,
    pub rtype: usize,
}

/// One subtask placed on a robot.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub task: usize,
    pub strategy_id: String,
    pub index: usize,
    pub action: String,
    pub robot: usize,
    pub start: f64,
    pub end: f64,
    pub cell: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub makespan: f64,
    pub placements: Vec<Placement>,
}

/// The subproblem induced by a selection for the first tasks of an instance.
#[derive(Debug, Clone)]
pub struct InnerProblem<'a> {
    pub(crate) inst: &'a Instance,
    pub(crate) selection: Vec<usize>,
    pub(crate) items: Vec<Item>,
    task_items: Vec<Vec<usize>>,
    groups: usize,
    /// Robots usable per required robot type.
    type_robots: Vec<Vec<usize>>,
}

impl<'a> InnerProblem<'a> {
    pub fn new(inst: &'a Instance, selection: &[usize]) -> Self {
        let mut items: Vec<Item> = Vec::new();
        let mut task_items = Vec::new();
        let mut groups = 0;
        let mut rtypes: Vec<String> = Vec::new();
        let mut type_robots: Vec<Vec<usize>> = Vec::new();
        for (t, &c) in selection.iter().enumerate() {
            let cand = &inst.tasks[t].candidates[c];
            let offset = items.len();
            let group_base = groups;
            let topo = topo_positions(&cand.items);
            let mut tail = vec![0.0; cand.items.len()];
            let min_dur: Vec<f64> = cand
                .items
                .iter()
                .map(|it| it.caps.iter().map(|c| c.1).fold(f64::INFINITY, f64::min))
                .collect();
            for &k in topo.iter().rev() {
                let after = cand
                    .items
                    .iter()
                    .enumerate()
                    .filter(|(_, it)| it.deps.contains(&k))
                    .map(|(j, _)| tail[j])
                    .fold(0.0, f64::max);
                tail[k] = min_dur[k] + after;
            }
            let mut ids = Vec::new();
            for (k, it) in cand.items.iter().enumerate() {
                let rtype = rtypes.iter().position(|r| *r == it.robot_type).unwrap_or_else(|| {
                    rtypes.push(it.robot_type.clone());
                    type_robots.push(Vec::new());
                    rtypes.len() - 1
                });
                for &(r, _) in &it.caps {
                    if !type_robots[rtype].contains(&r) {
                        type_robots[rtype].push(r);
                    }
                }
                groups = groups.max(group_base + it.group + 1);
                ids.push(offset + k);
                items.push(Item {
                    task: t,
                    local: k,
                    cell: it.cell,
                    caps: it.caps.clone(),
                    deps: it.deps.iter().map(|d| offset + d).collect(),
                    succ: Vec::new(),
                    release: it.release,
                    group: group_base + it.group,
                    excl: Vec::new(),
                    preds: inst.tasks[t].preds.clone(),
                    min_dur: min_dur[k],
                    tail: tail[k],
                    rtype,
                });
            }
            task_items.push(ids);
        }
        for x in 0..items.len() {
            for d in items[x].deps.clone() {
                items[d].succ.push(x);
            }
            let t = items[x].task;
            items[x].excl = inst.tasks[t]
                .excl
                .iter()
                .filter(|&&u| u < selection.len())
                .flat_map(|&u| task_items[u].iter().copied())
                .collect();
        }
        Self {
            inst,
            selection: selection.to_vec(),
            items,
            task_items,
            groups,
            type_robots,
        }
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    fn strategy_of(&self, task: usize) -> &str {
        &self.inst.tasks[task].candidates[self.selection[task]].strategy_id
    }

    fn placement(&self, x: usize, robot: usize, start: f64, end: f64) -> Placement {
        let it = &self.items[x];
        let cand = &self.inst.tasks[it.task].candidates[self.selection[it.task]];
        Placement {
            task: it.task,
            strategy_id: self.strategy_of(it.task).to_string(),
            index: cand.items[it.local].index,
            action: cand.items[it.local].action.clone(),
            robot,
            start,
            end,
            cell: it.cell,
        }
    }
}

/// Mutable dispatch state shared by the greedy and exact searches.
#[derive(Clone)]
struct State {
    disp: Vec<bool>,
    start: Vec<f64>,
    end: Vec<f64>,
    robot_of: Vec<usize>,
    free: Vec<f64>,
    rcell: Vec<usize>,
    used: Vec<u32>,
    group_robot: Vec<Option<usize>>,
    task_min: Vec<f64>,
    task_count: Vec<u32>,
    makespan: f64,
    done: usize,
}

struct Undo {
    x: usize,
    r: usize,
    free: f64,
    rcell: usize,
    group_set: bool,
    task_min: f64,
    makespan: f64,
}

impl State {
    fn new(p: &InnerProblem<'_>) -> Self {
        let n = p.items.len();
        Self {
            disp: vec![false; n],
            start: vec![0.0; n],
            end: vec![0.0; n],
            robot_of: vec![usize::MAX; n],
            free: p.inst.robots.iter().map(|r| r.free_at).collect(),
            rcell: p.inst.robots.iter().map(|r| r.cell).collect(),
            used: vec![0; p.inst.robots.len()],
            group_robot: vec![None; p.groups],
            task_min: vec![f64::INFINITY; p.task_items.len()],
            task_count: vec![0; p.task_items.len()],
            makespan: p.inst.baseline,
            done: 0,
        }
    }

    fn ready(&self, p: &InnerProblem<'_>, x: usize) -> bool {
        let it = &p.items[x];
        !self.disp[x]
            && it.deps.iter().all(|&d| self.disp[d])
            && it.preds.iter().all(|&t| self.task_count[t] > 0)
    }

    /// Robots `x` may be dispatched to, with symmetric fresh robots pruned
    /// when `prune_symmetry` is set.
    fn robots_for<'p>(&'p self, p: &'p InnerProblem<'_>, x: usize, prune_symmetry: bool) -> impl Iterator<Item = (usize, f64)> + 'p {
        let it = &p.items[x];
        let forced = self.group_robot[it.group];
        it.caps.iter().copied().filter(move |&(r, _)| {
            if let Some(f) = forced {
                return r == f;
            }
            if prune_symmetry && self.used[r] == 0 {
                let class = p.inst.robots[r].class;
                return !it
                    .caps
                    .iter()
                    .any(|&(q, _)| q < r && self.used[q] == 0 && p.inst.robots[q].class == class);
            }
            true
        })
    }

    fn earliest_start(&self, p: &InnerProblem<'_>, x: usize, r: usize) -> f64 {
        let it = &p.items[x];
        let mut s = it.release.max(self.free[r] + p.inst.travel(r, self.rcell[r], it.cell));
        for &d in &it.deps {
            s = s.max(self.end[d]);
        }
        for &t in &it.preds {
            s = s.max(self.task_min[t]);
        }
        for &y in &it.excl {
            if self.disp[y] {
                s = s.max(self.end[y]);
            }
        }
        s
    }

    fn apply(&mut self, p: &InnerProblem<'_>, x: usize, r: usize, start: f64, end: f64) -> Undo {
        let it = &p.items[x];
        let u = Undo {
            x,
            r,
            free: self.free[r],
            rcell: self.rcell[r],
            group_set: self.group_robot[it.group].is_none(),
            task_min: self.task_min[it.task],
            makespan: self.makespan,
        };
        self.disp[x] = true;
        self.start[x] = start;
        self.end[x] = end;
        self.robot_of[x] = r;
        self.free[r] = end;
        self.rcell[r] = it.cell;
        self.used[r] += 1;
        self.group_robot[it.group] = Some(r);
        self.task_min[it.task] = self.task_min[it.task].min(start);
        self.task_count[it.task] += 1;
        self.makespan = self.makespan.max(end);
        self.done += 1;
        u
    }

    fn undo(&mut self, p: &InnerProblem<'_>, u: Undo) {
        let it = &p.items[u.x];
        self.disp[u.x] = false;
        self.robot_of[u.x] = usize::MAX;
        self.free[u.r] = u.free;
        self.rcell[u.r] = u.rcell;
        self.used[u.r] -= 1;
        if u.group_set {
            self.group_robot[it.group] = None;
        }
        self.task_min[it.task] = u.task_min;
        self.task_count[it.task] -= 1;
        self.makespan = u.makespan;
        self.done -= 1;
    }

    fn schedule(&self, p: &InnerProblem<'_>) -> Schedule {
        let mut placements: Vec<Placement> = (0..p.items.len())
            .map(|x| p.placement(x, self.robot_of[x], self.start[x], self.end[x]))
            .collect();
        placements.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.robot.cmp(&b.robot)));
        Schedule {
            makespan: self.makespan,
            placements,
        }
    }

    /// Admissible bound on the makespan of any completion of this state.
    fn lower_bound(&self, p: &InnerProblem<'_>) -> f64 {
        let mut lb = self.makespan;
        let mut work = vec![0.0; p.type_robots.len()];
        for (x, it) in p.items.iter().enumerate() {
            if self.disp[x] {
                continue;
            }
            work[it.rtype] += it.min_dur;
            if !it.deps.iter().all(|&d| self.disp[d]) {
                continue;
            }
            let mut est = it.release;
            for &d in &it.deps {
                est = est.max(self.end[d]);
            }
            for &t in &it.preds {
                if self.task_count[t] > 0 {
                    est = est.max(self.task_min[t]);
                }
            }
            let reach = self
                .robots_for(p, x, false)
                .map(|(r, _)| self.free[r] + p.inst.travel(r, self.rcell[r], it.cell))
                .fold(f64::INFINITY, f64::min);
            lb = lb.max(est.max(reach) + it.tail);
        }
        for (k, &w) in work.iter().enumerate() {
            if w > 0.0 {
                lb = lb.max(workload_bound(p.type_robots[k].iter().map(|&r| self.free[r]), w));
            }
        }
        lb
    }
}

/// min over k of (sum of the k smallest free times + work) / k: no split of
/// `work` over any set of robots finishes earlier.
pub(crate) fn workload_bound(free: impl Iterator<Item = f64>, work: f64) -> f64 {
    let mut f: Vec<f64> = free.collect();
    if f.is_empty() {
        return f64::INFINITY;
    }
    f.sort_by(f64::total_cmp);
    let mut acc = 0.0;
    let mut best = f64::INFINITY;
    for (k, v) in f.iter().enumerate() {
        acc += v;
        best = best.min((acc + work) / (k + 1) as f64);
    }
    best
}

/// One pass: the lowest-index ready subtask goes to the capable robot that
/// can start it earliest.
pub fn greedy_upper_bound(p: &InnerProblem<'_>) -> Option<Schedule> {
    let mut st = State::new(p);
    while st.done < p.items.len() {
        let x = (0..p.items.len()).find(|&x| st.ready(p, x))?;
        let (r, s, e) = st
            .robots_for(p, x, false)
            .map(|(r, d)| {
                let s = st.earliest_start(p, x, r);
                (r, s, s + d)
            })
            .filter(|c| c.1.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))?;
        st.apply(p, x, r, s, e);
    }
    Some(st.schedule(p))
}

/// Outcome of an exact solve.
#[derive(Debug, Clone)]
pub struct InnerResult {
    /// Best schedule strictly below the cutoff, if any was found.
    pub schedule: Option<Schedule>,
    /// True when the search space was exhausted within budget.
    pub proven: bool,
}

struct Dfs<'p, 'a> {
    p: &'p InnerProblem<'a>,
    st: State,
    best: f64,
    best_schedule: Option<Schedule>,
    budget: &'p mut Budget,
    aborted: bool,
}

impl Dfs<'_, '_> {
    fn run(&mut self) {
        if !self.budget.take() {
            self.aborted = true;
            return;
        }
        let p = self.p;
        if self.st.done == p.items.len() {
            if self.st.makespan < self.best - EPS {
                self.best = self.st.makespan;
                self.best_schedule = Some(self.st.schedule(p));
            }
            return;
        }
        if self.st.lower_bound(p) >= self.best - EPS {
            return;
        }
        let mut children: Vec<(f64, usize, usize, f64)> = Vec::new();
        for x in 0..p.items.len() {
            if !self.st.ready(p, x) {
                continue;
            }
            for (r, d) in self.st.robots_for(p, x, true) {
                let s = self.st.earliest_start(p, x, r);
                if s.is_finite() {
                    children.push((s + d, x, r, s));
                }
            }
        }
        children.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for (end, x, r, start) in children {
            if end >= self.best - EPS {
                break;
            }
            let u = self.st.apply(p, x, r, start, end);
            self.run();
            self.st.undo(p, u);
            if self.aborted {
                return;
            }
        }
    }
}

/// Minimum-makespan schedule strictly below `cutoff`.
pub fn solve_inner_schedule(p: &InnerProblem<'_>, cutoff: f64, budget: &mut Budget) -> InnerResult {
    let mut best = cutoff;
    let mut best_schedule = None;
    if let Some(g) = greedy_upper_bound(p) {
        if g.makespan < best - EPS {
            best = g.makespan;
            best_schedule = Some(g);
        }
    }
    let mut dfs = Dfs {
        p,
        st: State::new(p),
        best,
        best_schedule,
        budget,
        aborted: false,
    };
    dfs.run();
    InnerResult {
        schedule: dfs.best_schedule,
        proven: !dfs.aborted,
    }
}

/// Admissible bound for the subproblem before anything is dispatched.
pub fn root_lower_bound(p: &InnerProblem<'_>) -> f64 {
    State::new(p).lower_bound(p)
}
