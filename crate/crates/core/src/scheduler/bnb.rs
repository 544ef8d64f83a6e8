//! Best-first branch and bound over strategy selections.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::time::Instant;

use super::inner::{greedy_upper_bound, solve_inner_schedule, workload_bound, Budget, InnerProblem, Schedule};
use super::instance::Instance;
use super::{FleetPlan, PlannedSubtask, PlanningInput, ScheduleError, SearchConfig};

const EPS: f64 = 1e-9;

/// Bound on every completion of a node that fixed strategies for the first
/// `selection.len()` tasks and whose scheduled part has makespan
/// `makespan_so_far`.
///
/// The default is the maximum of the partial makespan, the longest remaining
/// single-task chain and a per-robot-type workload bound. With `additive` set it
/// is the partial makespan plus the summed minimum work of the remaining
/// tasks, which is not admissible when robots work in parallel.
pub fn lower_bound(inst: &Instance, selection: &[usize], makespan_so_far: f64, additive: bool) -> f64 {
    let rest = &inst.tasks[selection.len()..];
    if additive {
        return makespan_so_far
            + rest
                .iter()
                .map(|t| t.candidates.iter().map(|c| c.min_work).fold(f64::INFINITY, f64::min))
                .sum::<f64>();
    }
    let mut lb = makespan_so_far.max(inst.baseline);
    for t in rest {
        let chain = t.candidates.iter().map(|c| c.min_chain).fold(f64::INFINITY, f64::min);
        lb = lb.max(inst.now + chain);
    }
    let mut work: BTreeMap<&str, f64> = BTreeMap::new();
    for (t, &c) in selection.iter().enumerate() {
        for (ty, w) in &inst.tasks[t].candidates[c].work_by_type {
            *work.entry(ty).or_default() += w;
        }
    }
    for t in rest {
        let types: std::collections::BTreeSet<&str> = t
            .candidates
            .iter()
            .flat_map(|c| c.work_by_type.keys().map(String::as_str))
            .collect();
        for ty in types {
            let least = t
                .candidates
                .iter()
                .map(|c| c.work_by_type.get(ty).copied().unwrap_or(0.0))
                .fold(f64::INFINITY, f64::min);
            *work.entry(ty).or_default() += least;
        }
    }
    for (ty, w) in work {
        if w > 0.0 {
            let free = inst.robots.iter().filter(|r| r.robot_type == ty).map(|r| r.free_at);
            lb = lb.max(workload_bound(free, w));
        }
    }
    lb
}

struct Node {
    bound: f64,
    value: f64,
    selection: Vec<usize>,
    key: Vec<String>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    /// Greater pops first: smaller bound, then deeper, then smaller key.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.selection.len().cmp(&other.selection.len()))
            .then(other.key.cmp(&self.key))
    }
}

/// Search statistics beyond what the plan carries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchStats {
    /// Incumbent makespan after each improvement, starting with the greedy one.
    pub incumbent_trace: Vec<f64>,
    pub inner_nodes: u64,
}

fn to_plan(inst: &Instance, sched: Option<&Schedule>, selection: &[usize]) -> FleetPlan {
    let mut robots: BTreeMap<String, Vec<PlannedSubtask>> = BTreeMap::new();
    for f in &inst.fixed {
        robots.entry(f.robot.clone()).or_default().push(f.clone());
    }
    if let Some(s) = sched {
        for p in &s.placements {
            robots.entry(inst.robots[p.robot].id.clone()).or_default().push(PlannedSubtask {
                task_id: inst.tasks[p.task].id.clone(),
                strategy_id: p.strategy_id.clone(),
                index: p.index,
                action: p.action.clone(),
                robot: inst.robots[p.robot].id.clone(),
                start_s: p.start,
                end_s: p.end,
                cell: inst.cells[p.cell],
                fixed: false,
            });
        }
    }
    for list in robots.values_mut() {
        list.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then(a.end_s.total_cmp(&b.end_s)));
    }
    let makespan = robots.values().flatten().map(|p| p.end_s).fold(0.0, f64::max);
    FleetPlan {
        makespan_s: makespan,
        optimal: false,
        nodes_expanded: 0,
        robots,
        selection: selection
            .iter()
            .enumerate()
            .map(|(t, &c)| (inst.tasks[t].id.clone(), inst.tasks[t].candidates[c].strategy_id.clone()))
            .collect(),
        deferred: inst.deferred.clone(),
    }
}

pub fn bnb_search(input: &PlanningInput<'_>, config: &SearchConfig) -> Result<FleetPlan, ScheduleError> {
    bnb_search_traced(input, config).map(|(p, _)| p)
}

/// Branch and bound over the instance built from `input`. Tasks are
/// expanded in a fixed topological order, so a task's strategy is chosen
/// only after all its predecessors'. Each node is valued by the exact
/// schedule of its selected prefix.
pub fn bnb_search_traced(input: &PlanningInput<'_>, config: &SearchConfig) -> Result<(FleetPlan, SearchStats), ScheduleError> {
    let inst = Instance::build(input);
    let mut stats = SearchStats::default();
    let n = inst.task_count();
    if n == 0 {
        let mut plan = to_plan(&inst, None, &[]);
        plan.optimal = true;
        stats.incumbent_trace.push(plan.makespan_s);
        return Ok((plan, stats));
    }
    let mut budget = Budget {
        nodes_left: config.max_nodes,
        deadline: config.time_limit.map(|d| Instant::now() + d),
        used: 0,
    };

    let init = inst.min_work_selection();
    let mut best: Option<(Schedule, Vec<usize>)> = greedy_upper_bound(&InnerProblem::new(&inst, &init)).map(|s| (s, init));
    let mut incumbent = best.as_ref().map_or(f64::INFINITY, |b| b.0.makespan);
    stats.incumbent_trace.push(incumbent);

    let mut heap = BinaryHeap::new();
    heap.push(Node {
        bound: lower_bound(&inst, &[], inst.baseline, config.paper_lb),
        value: inst.baseline,
        selection: Vec::new(),
        key: Vec::new(),
    });
    let mut complete = true;
    let mut inadmissible_prune = false;
    let mut expanded: u64 = 0;
    while let Some(node) = heap.pop() {
        if node.value >= incumbent - EPS {
            continue;
        }
        if node.bound >= incumbent - EPS {
            if !config.paper_lb {
                break;
            }
            // the bound may overshoot, so this prune forfeits the guarantee
            inadmissible_prune = true;
            continue;
        }
        if budget.exhausted() {
            complete = false;
            break;
        }
        expanded += 1;
        let t = node.selection.len();
        for c in 0..inst.tasks[t].candidates.len() {
            let mut sel = node.selection.clone();
            sel.push(c);
            let p = InnerProblem::new(&inst, &sel);
            let res = solve_inner_schedule(&p, incumbent, &mut budget);
            if !res.proven {
                complete = false;
            }
            let Some(sched) = res.schedule else {
                continue;
            };
            if sel.len() == n {
                incumbent = sched.makespan;
                stats.incumbent_trace.push(incumbent);
                best = Some((sched, sel));
            } else if res.proven {
                let mut key = node.key.clone();
                key.push(inst.tasks[t].candidates[c].strategy_id.clone());
                heap.push(Node {
                    bound: lower_bound(&inst, &sel, sched.makespan, config.paper_lb).max(sched.makespan),
                    value: sched.makespan,
                    selection: sel,
                    key,
                });
            }
        }
    }
    stats.inner_nodes = budget.used;
    let Some((sched, sel)) = best else {
        return Err(ScheduleError::NoFeasiblePlan);
    };
    let mut plan = to_plan(&inst, Some(&sched), &sel);
    plan.optimal = complete && !inadmissible_prune;
    plan.nodes_expanded = expanded;
    Ok((plan, stats))
}
