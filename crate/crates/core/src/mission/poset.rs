//! Relaxed partially ordered set of tasks: precedence (start-after-start)
//! and mutual exclusion, kept as a labelled DAG.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ltl::Ltl;
use super::template::MissionSpec;
use crate::geo::Cell;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(String);

impl TaskId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskNode {
    pub id: TaskId,
    pub task_type: String,
    /// 0 is the highest priority.
    pub priority_rank: u32,
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_event: Option<String>,
    /// Where the task has to be carried out; `None` for standing obligations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<Cell>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTypeInfo {
    pub family: String,
    pub priority_rank: u32,
}

/// Task types known to the mission and the type-level relations extracted
/// from it; used to wire new instances into the poset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCatalog {
    pub types: BTreeMap<String, TaskTypeInfo>,
    pub type_precedence: BTreeSet<(String, String)>,
    pub type_exclusions: BTreeSet<(String, String)>,
}

impl TaskCatalog {
    fn excludes(&self, a: &str, b: &str) -> bool {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.type_exclusions
            .iter()
            .any(|(x, y)| x == key.0 && y == key.1)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPoset {
    pub tasks: Vec<TaskNode>,
    pub precedence: BTreeSet<(TaskId, TaskId)>,
    /// Unordered pairs, stored with the smaller id first.
    pub exclusion: BTreeSet<(TaskId, TaskId)>,
    pub catalog: TaskCatalog,
    #[serde(default)]
    next_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PosetError {
    #[error("event `{0}` is not a reaction of the mission")]
    UnknownEvent(String),
    #[error("task type `{0}` is not known to the mission")]
    UnknownTaskType(String),
    #[error("task `{0}` does not exist")]
    UnknownTask(TaskId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum PosetViolation {
    DanglingPrecedence { from: TaskId, to: TaskId },
    DanglingExclusion { a: TaskId, b: TaskId },
    DuplicateTask { id: TaskId },
    Cycle { tasks: Vec<TaskId> },
    ReflexiveExclusion { task: TaskId },
}

impl fmt::Display for PosetViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DanglingPrecedence { from, to } => write!(f, "precedence {from} -> {to} references a missing task"),
            Self::DanglingExclusion { a, b } => write!(f, "exclusion {a} # {b} references a missing task"),
            Self::DuplicateTask { id } => write!(f, "task id {id} appears twice"),
            Self::Cycle { tasks } => {
                let names: Vec<_> = tasks.iter().map(|t| t.as_str()).collect();
                write!(f, "precedence cycle through [{}]", names.join(", "))
            }
            Self::ReflexiveExclusion { task } => write!(f, "task {task} excludes itself"),
        }
    }
}

fn ordered(a: TaskId, b: TaskId) -> (TaskId, TaskId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl TaskPoset {
    pub fn task(&self, id: &TaskId) -> Option<&TaskNode> {
        self.tasks.iter().find(|t| &t.id == id)
    }

    pub fn task_mut(&mut self, id: &TaskId) -> Option<&mut TaskNode> {
        self.tasks.iter_mut().find(|t| &t.id == id)
    }

    pub fn contains(&self, id: &TaskId) -> bool {
        self.task(id).is_some()
    }

    pub fn predecessors<'a>(&'a self, id: &'a TaskId) -> impl Iterator<Item = &'a TaskId> + 'a {
        self.precedence
            .iter()
            .filter(move |(_, to)| to == id)
            .map(|(from, _)| from)
    }

    pub fn excluded_with<'a>(&'a self, id: &'a TaskId) -> impl Iterator<Item = &'a TaskId> + 'a {
        self.exclusion.iter().filter_map(move |(a, b)| {
            if a == id {
                Some(b)
            } else if b == id {
                Some(a)
            } else {
                None
            }
        })
    }

    pub fn task_types(&self) -> BTreeSet<&str> {
        self.tasks.iter().map(|t| t.task_type.as_str()).collect()
    }

    fn fresh_id(&mut self, task_type: &str) -> TaskId {
        self.next_id += 1;
        TaskId(format!("{task_type}#{}", self.next_id))
    }

    /// Is `to` reachable from `from` along precedence edges?
    pub fn reaches(&self, from: &TaskId, to: &TaskId) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(cur) = stack.pop() {
            if cur == to {
                return true;
            }
            if !seen.insert(cur) {
                continue;
            }
            stack.extend(
                self.precedence
                    .iter()
                    .filter(|(a, _)| a == cur)
                    .map(|(_, b)| b),
            );
        }
        false
    }

    fn add_edge_if_acyclic(&mut self, from: &TaskId, to: &TaskId) -> bool {
        if from == to || self.reaches(to, from) {
            return false;
        }
        self.precedence.insert((from.clone(), to.clone()));
        true
    }

    /// Registers a task type that was not part of the original mission.
    pub fn register_task_type(&mut self, task_type: &str, family: Option<&str>, priority_rank: u32) {
        self.catalog
            .types
            .entry(task_type.to_string())
            .or_insert_with(|| TaskTypeInfo {
                family: family.unwrap_or(task_type).to_string(),
                priority_rank,
            });
    }

    /// Functional form of [`TaskPoset::insert_instance`].
    pub fn add_task_instance(
        &self,
        task_type: &str,
        priority_rank: u32,
    ) -> Result<(TaskPoset, TaskId), PosetError> {
        let mut next = self.clone();
        let id = next.insert_instance(task_type, priority_rank, None, None)?;
        Ok((next, id))
    }

    /// Adds a new instance of a known task type.
    ///
    /// Existing instances of the same family with a strictly smaller rank
    /// number precede the new node and those with a larger one follow it.
    /// Type-level precedence from nested eventualities is applied first and
    /// wins on conflict; any edge that would close a cycle is skipped.
    pub fn insert_instance(
        &mut self,
        task_type: &str,
        priority_rank: u32,
        site: Option<Cell>,
        source_event: Option<String>,
    ) -> Result<TaskId, PosetError> {
        let info = self
            .catalog
            .types
            .get(task_type)
            .cloned()
            .ok_or_else(|| PosetError::UnknownTaskType(task_type.to_string()))?;
        let id = self.fresh_id(task_type);
        let existing: Vec<TaskNode> = self.tasks.clone();
        self.tasks.push(TaskNode {
            id: id.clone(),
            task_type: task_type.to_string(),
            priority_rank,
            family: info.family.clone(),
            source_event,
            site,
        });

        let cat = self.catalog.clone();
        let before = |a: &str, b: &str| cat.type_precedence.contains(&(a.to_string(), b.to_string()));
        for other in &existing {
            if before(&other.task_type, task_type) {
                self.add_edge_if_acyclic(&other.id, &id);
            } else if before(task_type, &other.task_type) {
                self.add_edge_if_acyclic(&id, &other.id);
            }
        }
        let family: Vec<&TaskNode> = existing.iter().filter(|o| o.family == info.family).collect();
        // in-edges before out-edges, so out-edges see the full ancestry
        for other in family.iter().filter(|o| o.priority_rank < priority_rank) {
            if !before(task_type, &other.task_type) {
                self.add_edge_if_acyclic(&other.id, &id);
            }
        }
        for other in family.iter().filter(|o| o.priority_rank > priority_rank) {
            if !before(&other.task_type, task_type) {
                self.add_edge_if_acyclic(&id, &other.id);
            }
        }
        for other in &existing {
            if cat.excludes(&other.task_type, task_type) {
                self.exclusion.insert(ordered(other.id.clone(), id.clone()));
            }
        }
        Ok(id)
    }

    /// Checks the poset invariants; an empty list means the poset is sound.
    pub fn validate(&self) -> Vec<PosetViolation> {
        let mut out = Vec::new();
        let mut index = BTreeMap::new();
        for (i, t) in self.tasks.iter().enumerate() {
            if index.insert(&t.id, i).is_some() {
                out.push(PosetViolation::DuplicateTask { id: t.id.clone() });
            }
        }
        let mut g: DiGraph<usize, ()> = DiGraph::new();
        let nodes: Vec<_> = (0..self.tasks.len()).map(|i| g.add_node(i)).collect();
        let mut self_loops = BTreeSet::new();
        for (a, b) in &self.precedence {
            match (index.get(a), index.get(b)) {
                (Some(&i), Some(&j)) => {
                    if i == j {
                        self_loops.insert(i);
                    }
                    g.add_edge(nodes[i], nodes[j], ());
                }
                _ => out.push(PosetViolation::DanglingPrecedence {
                    from: a.clone(),
                    to: b.clone(),
                }),
            }
        }
        let mut cycles: Vec<Vec<TaskId>> = tarjan_scc(&g)
            .into_iter()
            .filter(|scc| scc.len() > 1 || self_loops.contains(&g[scc[0]]))
            .map(|scc| {
                let mut ids: Vec<TaskId> = scc.iter().map(|n| self.tasks[g[*n]].id.clone()).collect();
                ids.sort();
                ids
            })
            .collect();
        cycles.sort();
        out.extend(cycles.into_iter().map(|tasks| PosetViolation::Cycle { tasks }));
        for (a, b) in &self.exclusion {
            if a == b {
                out.push(PosetViolation::ReflexiveExclusion { task: a.clone() });
            } else if !index.contains_key(a) || !index.contains_key(b) {
                out.push(PosetViolation::DanglingExclusion {
                    a: a.clone(),
                    b: b.clone(),
                });
            }
        }
        out
    }

    /// Kahn's algorithm; ties resolved by insertion order. `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<TaskId>> {
        let n = self.tasks.len();
        let index: BTreeMap<&TaskId, usize> = self.tasks.iter().enumerate().map(|(i, t)| (&t.id, i)).collect();
        let mut indeg = vec![0usize; n];
        let mut succ = vec![Vec::new(); n];
        for (a, b) in &self.precedence {
            let (Some(&i), Some(&j)) = (index.get(a), index.get(b)) else {
                continue;
            };
            indeg[j] += 1;
            succ[i].push(j);
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(self.tasks[i].id.clone());
            for &j in &succ[i] {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.insert(j);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Graphviz rendering: precedence edges solid, exclusion edges dashed
    /// without arrowheads.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph poset {\n");
        for t in &self.tasks {
            let _ = writeln!(s, "  \"{}\" [label=\"{}\\n{}\"];", t.id, t.id, t.task_type);
        }
        for (a, b) in &self.precedence {
            let _ = writeln!(s, "  \"{a}\" -> \"{b}\";");
        }
        for (a, b) in &self.exclusion {
            let _ = writeln!(s, "  \"{a}\" -> \"{b}\" [style=dashed, dir=none];");
        }
        s.push_str("}\n");
        s
    }
}

pub fn validate_poset(poset: &TaskPoset) -> Vec<PosetViolation> {
    poset.validate()
}

pub fn poset_to_dot(poset: &TaskPoset) -> String {
    poset.to_dot()
}

/// Walks a response formula, creating one task per skill proposition and
/// precedence edges for nested eventualities: in `F (a && F b)` every task of
/// `a` precedes the tasks of `b`. Returns the "head" tasks of `f`.
fn walk_response<T: Clone>(
    f: &Ltl,
    make: &mut impl FnMut(&str) -> Option<T>,
    edges: &mut Vec<(T, T)>,
) -> Vec<T> {
    match f {
        Ltl::Atom(p) => make(p).into_iter().collect(),
        Ltl::Not(_) => Vec::new(),
        Ltl::Always(g) | Ltl::Eventually(g) | Ltl::Next(g) => walk_response(g, make, edges),
        Ltl::And(..) | Ltl::Or(..) => {
            let items: Vec<&Ltl> = match f {
                Ltl::And(..) => f.conjuncts(),
                Ltl::Or(a, b) => vec![&**a, &**b],
                _ => unreachable!(),
            };
            let (later, now): (Vec<&Ltl>, Vec<&Ltl>) =
                items.into_iter().partition(|i| matches!(i, Ltl::Eventually(_)));
            let heads: Vec<T> = now.iter().flat_map(|i| walk_response(i, make, edges)).collect();
            let tails: Vec<T> = later.iter().flat_map(|i| walk_response(i, make, edges)).collect();
            for h in &heads {
                for t in &tails {
                    edges.push((h.clone(), t.clone()));
                }
            }
            if heads.is_empty() {
                tails
            } else {
                heads
            }
        }
        Ltl::Implies(a, b) | Ltl::Until(a, b) => {
            let mut v = walk_response(a, make, edges);
            v.extend(walk_response(b, make, edges));
            v
        }
    }
}

/// Type-level precedence pairs implied by nested eventualities in every
/// reaction of the mission.
fn type_precedence(spec: &MissionSpec) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for r in &spec.reactions {
        let mut edges = Vec::new();
        walk_response(
            &r.response,
            &mut |p| spec.is_skill(p).then(|| spec.task_type_of(p)),
            &mut edges,
        );
        out.extend(edges.into_iter().filter(|(a, b)| a != b));
    }
    out
}

/// Builds the catalog of task types declared by the mission.
pub fn build_catalog(spec: &MissionSpec) -> TaskCatalog {
    let mut props: BTreeSet<&str> = BTreeSet::new();
    if let Some(n) = &spec.nominal {
        props.extend(n.atoms());
    }
    for r in &spec.reactions {
        props.extend(r.response.atoms());
    }
    props.extend(spec.proposition_bindings.keys().map(String::as_str));
    let mut types = BTreeMap::new();
    for p in props.into_iter().filter(|p| spec.is_skill(p)) {
        let b = spec.binding(p);
        let tt = spec.task_type_of(p);
        types.entry(tt.clone()).or_insert(TaskTypeInfo {
            family: b.family.unwrap_or_else(|| tt.clone()),
            priority_rank: b.priority_rank,
        });
    }
    let resolve = |name: &str| {
        if spec.proposition_bindings.contains_key(name) || spec.reactions.iter().any(|r| r.response.atoms().contains(name)) {
            spec.task_type_of(name)
        } else {
            name.to_string()
        }
    };
    let type_exclusions = spec
        .exclusions
        .iter()
        .map(|(a, b)| {
            let (a, b) = (resolve(a), resolve(b));
            if a <= b {
                (a, b)
            } else {
                (b, a)
            }
        })
        .collect();
    TaskCatalog {
        types,
        type_precedence: type_precedence(spec),
        type_exclusions,
    }
}

/// Builds the task poset for the nominal part plus the given active reactions.
pub fn build_task_poset(spec: &MissionSpec, active_events: &[&str]) -> Result<TaskPoset, PosetError> {
    for e in active_events {
        if spec.reaction(e).is_none() {
            return Err(PosetError::UnknownEvent(e.to_string()));
        }
    }
    let mut poset = TaskPoset {
        catalog: build_catalog(spec),
        ..TaskPoset::default()
    };

    let new_node = |poset: &mut TaskPoset, prop: &str, source: Option<&str>| {
        let tt = spec.task_type_of(prop);
        let info = poset.catalog.types[&tt].clone();
        let id = poset.fresh_id(&tt);
        poset.tasks.push(TaskNode {
            id: id.clone(),
            task_type: tt,
            priority_rank: info.priority_rank,
            family: info.family,
            source_event: source.map(str::to_string),
            site: None,
        });
        id
    };

    if let Some(n) = &spec.nominal {
        for p in n.atoms() {
            if spec.is_skill(p) {
                new_node(&mut poset, p, None);
            }
        }
    }

    let mut nested = Vec::new();
    for e in active_events {
        let r = spec.reaction(e).expect("checked above");
        let mut created = Vec::new();
        let mut edges = Vec::new();
        walk_response(
            &r.response,
            &mut |p: &str| {
                if spec.is_skill(p) {
                    created.push(p.to_string());
                    Some(created.len() - 1)
                } else {
                    None
                }
            },
            &mut edges,
        );
        let ids: Vec<TaskId> = created.iter().map(|p| new_node(&mut poset, p, Some(e))).collect();
        for (a, b) in edges {
            if a != b {
                nested.push((ids[a].clone(), ids[b].clone()));
            }
        }
    }
    for (a, b) in &nested {
        poset.add_edge_if_acyclic(a, b);
    }

    // priority ranks within a family; nested eventualities win on conflict
    let nodes = poset.tasks.clone();
    let cat = poset.catalog.clone();
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            if a.family != b.family || a.priority_rank == b.priority_rank {
                continue;
            }
            let (hi, lo) = if a.priority_rank < b.priority_rank { (a, b) } else { (b, a) };
            let opposed = poset.precedence.contains(&(lo.id.clone(), hi.id.clone()))
                || cat.type_precedence.contains(&(lo.task_type.clone(), hi.task_type.clone()));
            if !opposed {
                poset.add_edge_if_acyclic(&hi.id, &lo.id);
            }
        }
    }
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            if cat.excludes(&a.task_type, &b.task_type) {
                poset.exclusion.insert(ordered(a.id.clone(), b.id.clone()));
            }
        }
    }
    Ok(poset)
}
