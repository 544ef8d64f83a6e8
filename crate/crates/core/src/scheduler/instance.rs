//! Grounds the poset and layered DAG into a scheduling instance: usable
//! candidate strategies per task, resolved locations, robot capabilities and
//! travel distances.

use std::collections::{BTreeMap, BTreeSet};

use crate::geo::{Cell, DistanceField, GridMap};
use crate::mission::TaskId;
use crate::strategy::{StrategyDag, TASK_TARGET};

use super::{PlannedSubtask, PlanningInput, ProgressItem};

#[derive(Debug, Clone)]
pub(crate) struct RobotInfo {
    pub id: String,
    pub robot_type: String,
    pub velocity: f64,
    pub free_at: f64,
    pub cell: usize,
    /// Robots of equal class are interchangeable while unused.
    pub class: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct CandItem {
    pub index: usize,
    pub robot_type: String,
    pub action: String,
    pub cell: usize,
    /// Capable robots with their duration.
    pub caps: Vec<(usize, f64)>,
    /// Positions (within the candidate's remaining items) this item waits for.
    pub deps: Vec<usize>,
    pub release: f64,
    /// Local same-robot group (position of the group's first item).
    pub group: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Candidate {
    pub strategy_id: String,
    pub items: Vec<CandItem>,
    pub min_work: f64,
    pub min_chain: f64,
    pub work_by_type: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct PTask {
    pub id: TaskId,
    pub candidates: Vec<Candidate>,
    /// Earlier tasks whose first start bounds this task's first start.
    pub preds: Vec<usize>,
    pub excl: Vec<usize>,
}

/// A grounded scheduling instance. Tasks are kept in a topological order of
/// the precedence relation.
#[derive(Debug, Clone)]
pub struct Instance {
    pub(crate) tasks: Vec<PTask>,
    pub(crate) robots: Vec<RobotInfo>,
    pub(crate) cells: Vec<Cell>,
    hops: Vec<Vec<Option<u32>>>,
    cell_m: f64,
    pub(crate) now: f64,
    /// Completed and in-flight subtasks carried into the plan unchanged.
    pub fixed: Vec<PlannedSubtask>,
    pub deferred: Vec<TaskId>,
    pub(crate) baseline: f64,
}

fn union_find_groups(s: &StrategyDag) -> Vec<usize> {
    let n = s.subtasks.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for st in &s.subtasks {
        if let Some(o) = st.done_by_same_robot_as {
            let (a, b) = (find(&mut parent, st.index), find(&mut parent, o));
            let (lo, hi) = (a.min(b), a.max(b));
            parent[hi] = lo;
        }
    }
    (0..n).map(|i| find(&mut parent, i)).collect()
}

struct CellTable<'m> {
    map: &'m GridMap,
    cells: Vec<Cell>,
    index: BTreeMap<Cell, usize>,
    fields: Vec<DistanceField>,
}

impl<'m> CellTable<'m> {
    fn id(&mut self, c: Cell) -> usize {
        if let Some(&i) = self.index.get(&c) {
            return i;
        }
        self.cells.push(c);
        self.fields.push(self.map.distances_from(c));
        self.index.insert(c, self.cells.len() - 1);
        self.cells.len() - 1
    }

    fn hops(&self, a: usize, b: Cell) -> Option<u32> {
        self.fields[a].get(b)
    }
}

/// Nearest instance of `kind` from `site` by path length, ties by feature id.
pub fn resolve_target(map: &GridMap, site: Cell, target: &str) -> Option<Cell> {
    if target == TASK_TARGET {
        return Some(site);
    }
    let field = map.distances_from(site);
    map.features_of_kind(target)
        .filter_map(|(id, c)| field.get(c).map(|d| (d, id, c)))
        .min_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)))
        .map(|(_, _, c)| c)
}

impl Instance {
    pub fn build(input: &PlanningInput<'_>) -> Instance {
        let map = input.map;
        let poset = input.poset;
        let mut table = CellTable {
            map,
            cells: Vec::new(),
            index: BTreeMap::new(),
            fields: Vec::new(),
        };

        let mut robots = Vec::new();
        let mut robot_index = BTreeMap::new();
        let mut classes: Vec<String> = Vec::new();
        for r in input.robots.iter().filter(|r| !r.failed) {
            let cell = table.id(r.location);
            let key = serde_json::to_string(&(&r.spec.robot_type, &r.spec.skills, r.spec.velocity_mps, r.location, r.available_at.max(input.now)))
                .unwrap_or_default();
            let class = classes.iter().position(|k| *k == key).unwrap_or_else(|| {
                classes.push(key);
                classes.len() - 1
            });
            robot_index.insert(r.spec.id.as_str(), robots.len());
            robots.push(RobotInfo {
                id: r.spec.id.clone(),
                robot_type: r.spec.robot_type.clone(),
                velocity: r.spec.velocity_mps,
                free_at: r.available_at.max(input.now),
                cell,
                class,
            });
        }

        let mut progress: BTreeMap<&TaskId, Vec<&ProgressItem>> = BTreeMap::new();
        for p in input.progress {
            progress.entry(&p.task_id).or_default().push(p);
        }
        let fixed: Vec<PlannedSubtask> = input
            .progress
            .iter()
            .map(|p| PlannedSubtask {
                task_id: p.task_id.clone(),
                strategy_id: p.strategy_id.clone(),
                index: p.index,
                action: p.action.clone(),
                robot: p.robot.clone(),
                start_s: p.start_s,
                end_s: p.end_s,
                cell: p.cell,
                fixed: true,
            })
            .collect();
        let baseline = fixed.iter().map(|f| f.end_s).fold(0.0, f64::max);
        // in-flight intervals per task, for exclusion releases
        let inflight_end: BTreeMap<&TaskId, f64> = input
            .progress
            .iter()
            .filter(|p| !p.completed)
            .fold(BTreeMap::new(), |mut m, p| {
                let e = m.entry(&p.task_id).or_insert(f64::NEG_INFINITY);
                *e = f64::max(*e, p.end_s);
                m
            });

        let order = poset
            .topological_order()
            .unwrap_or_else(|| poset.tasks.iter().map(|t| t.id.clone()).collect());
        let mut tasks: Vec<PTask> = Vec::new();
        let mut pos_of: BTreeMap<TaskId, usize> = BTreeMap::new();
        let mut deferred: BTreeSet<TaskId> = BTreeSet::new();

        for id in &order {
            let node = poset.task(id).expect("id from the poset");
            let Some(site) = node.site else {
                continue;
            };
            if poset.predecessors(id).any(|p| deferred.contains(p)) {
                deferred.insert(id.clone());
                continue;
            }
            let done = progress.get(id).cloned().unwrap_or_default();
            let excl_release = poset
                .excluded_with(id)
                .filter_map(|o| inflight_end.get(o))
                .fold(input.now, |a, &b| a.max(b));
            let candidates: Vec<Candidate> = if let Some(first) = done.first() {
                let Some(s) = input.layered.strategy(&first.strategy_id) else {
                    deferred.insert(id.clone());
                    continue;
                };
                if done.len() >= s.subtasks.len() {
                    // every subtask is already running or finished
                    continue;
                }
                ground(s, site, &done, excl_release, map, &mut table, input, &robot_index, &robots)
                    .into_iter()
                    .collect()
            } else {
                input
                    .layered
                    .strategies_for(&node.task_type)
                    .iter()
                    .filter_map(|s| ground(s, site, &[], excl_release, map, &mut table, input, &robot_index, &robots))
                    .collect()
            };
            if candidates.is_empty() {
                tracing::debug!(task = %id, "no usable strategy, task deferred");
                deferred.insert(id.clone());
                continue;
            }
            let started = !done.is_empty();
            let preds = if started {
                Vec::new()
            } else {
                poset
                    .predecessors(id)
                    .filter_map(|p| pos_of.get(p).copied())
                    .collect()
            };
            pos_of.insert(id.clone(), tasks.len());
            tasks.push(PTask {
                id: id.clone(),
                candidates,
                preds,
                excl: Vec::new(),
            });
        }
        for (a, b) in &poset.exclusion {
            if let (Some(&i), Some(&j)) = (pos_of.get(a), pos_of.get(b)) {
                tasks[i].excl.push(j);
                tasks[j].excl.push(i);
            }
        }
        for t in &mut tasks {
            t.excl.sort_unstable();
            t.excl.dedup();
        }

        let n = table.cells.len();
        let hops = (0..n)
            .map(|a| (0..n).map(|b| table.hops(a, table.cells[b])).collect())
            .collect();
        Instance {
            tasks,
            robots,
            cells: table.cells,
            hops,
            cell_m: map.cell_m,
            now: input.now,
            fixed,
            deferred: deferred.into_iter().collect(),
            baseline,
        }
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &TaskId> {
        self.tasks.iter().map(|t| &t.id)
    }

    pub fn candidate_ids(&self, task: usize) -> Vec<&str> {
        self.tasks[task].candidates.iter().map(|c| c.strategy_id.as_str()).collect()
    }

    pub(crate) fn travel(&self, robot: usize, from: usize, to: usize) -> f64 {
        if from == to {
            return 0.0;
        }
        match self.hops[from][to] {
            Some(h) => h as f64 * self.cell_m / self.robots[robot].velocity,
            None => f64::INFINITY,
        }
    }

    /// Selection that picks the candidate with the least total work per task.
    pub fn min_work_selection(&self) -> Vec<usize> {
        self.tasks
            .iter()
            .map(|t| {
                (0..t.candidates.len())
                    .min_by(|&a, &b| t.candidates[a].min_work.total_cmp(&t.candidates[b].min_work))
                    .unwrap_or(0)
            })
            .collect()
    }
}

#[allow(clippy::too_many_arguments)]
fn ground(
    s: &StrategyDag,
    site: Cell,
    done: &[&ProgressItem],
    excl_release: f64,
    map: &GridMap,
    table: &mut CellTable<'_>,
    input: &PlanningInput<'_>,
    robot_index: &BTreeMap<&str, usize>,
    robots: &[RobotInfo],
) -> Option<Candidate> {
    if s.validate().is_err() {
        return None;
    }
    let groups = union_find_groups(s);
    let done_idx: BTreeMap<usize, &ProgressItem> = done.iter().map(|p| (p.index, *p)).collect();
    let remaining: Vec<usize> = (0..s.subtasks.len()).filter(|i| !done_idx.contains_key(i)).collect();
    let pos: BTreeMap<usize, usize> = remaining.iter().enumerate().map(|(p, &i)| (i, p)).collect();

    let mut items = Vec::new();
    for &i in &remaining {
        let st = &s.subtasks[i];
        let cell = resolve_target(map, site, &st.target)?;
        if !map.is_traversable(cell) {
            return None;
        }
        let cid = table.id(cell);
        let mut caps = Vec::new();
        for (ri, r) in input.robots.iter().filter(|r| !r.failed).enumerate() {
            if r.spec.robot_type != st.robot_type {
                continue;
            }
            let Some(d) = st.duration_override.or_else(|| r.spec.skill_duration(&st.action)) else {
                continue;
            };
            if r.location != cell && table.hops(robots[ri].cell, cell).is_none() {
                continue;
            }
            caps.push((ri, d));
        }
        let mut release = excl_release;
        let mut deps = Vec::new();
        for &d in &st.dependencies {
            match done_idx.get(&d) {
                Some(p) if !p.completed => release = release.max(p.end_s),
                Some(_) => {}
                None => deps.push(pos[&d]),
            }
        }
        // same-robot group: forced if a member is already under way
        let g = groups[i];
        let forced = (0..s.subtasks.len())
            .filter(|&j| groups[j] == g)
            .find_map(|j| done_idx.get(&j))
            .map(|p| robot_index.get(p.robot.as_str()).copied());
        let forced = match forced {
            Some(None) => return None,
            Some(Some(r)) => Some(r),
            None => None,
        };
        if let Some(r) = forced {
            caps.retain(|c| c.0 == r);
        }
        let group = (0..s.subtasks.len())
            .filter(|&j| groups[j] == g)
            .find_map(|j| pos.get(&j).copied())
            .unwrap_or(0);
        items.push(CandItem {
            index: i,
            robot_type: st.robot_type.clone(),
            action: st.action.clone(),
            cell: cid,
            caps,
            deps,
            release,
            group,
        });
    }
    // a group can only use robots capable of every member
    let group_ids: BTreeSet<usize> = items.iter().map(|it| it.group).collect();
    for g in group_ids {
        let members: Vec<usize> = (0..items.len()).filter(|&k| items[k].group == g).collect();
        let common: BTreeSet<usize> = members
            .iter()
            .map(|&k| items[k].caps.iter().map(|c| c.0).collect::<BTreeSet<_>>())
            .reduce(|a, b| a.intersection(&b).copied().collect())
            .unwrap_or_default();
        for &k in &members {
            items[k].caps.retain(|c| common.contains(&c.0));
        }
    }
    if items.iter().any(|it| it.caps.is_empty()) {
        return None;
    }
    let min_dur: Vec<f64> = items
        .iter()
        .map(|it| it.caps.iter().map(|c| c.1).fold(f64::INFINITY, f64::min))
        .collect();
    let min_work = min_dur.iter().sum();
    let mut work_by_type: BTreeMap<String, f64> = BTreeMap::new();
    for (it, d) in items.iter().zip(&min_dur) {
        *work_by_type.entry(it.robot_type.clone()).or_default() += d;
    }
    let mut chain = vec![0.0; items.len()];
    // items are in index order and dependencies point backwards only after
    // a topological pass
    let topo = topo_positions(&items);
    for &k in &topo {
        let before = items[k].deps.iter().map(|&d| chain[d]).fold(0.0, f64::max);
        chain[k] = before + min_dur[k];
    }
    let min_chain = chain.iter().copied().fold(0.0, f64::max);
    Some(Candidate {
        strategy_id: s.strategy_id.clone(),
        items,
        min_work,
        min_chain,
        work_by_type,
    })
}

pub(crate) fn topo_positions(items: &[CandItem]) -> Vec<usize> {
    let n = items.len();
    let mut indeg: Vec<usize> = items.iter().map(|it| it.deps.len()).collect();
    let mut ready: BTreeSet<usize> = (0..n).filter(|&k| indeg[k] == 0).collect();
    let mut out = Vec::with_capacity(n);
    while let Some(k) = ready.pop_first() {
        out.push(k);
        for (j, it) in items.iter().enumerate() {
            if it.deps.contains(&k) {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.insert(j);
                }
            }
        }
    }
    out
}
