//! Splits a reactive mission formula into its nominal part and the
//! `G (trigger -> F response)` reactions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ltl::Ltl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropositionKind {
    Observation,
    Skill,
}

/// How a proposition maps onto the world: an observation, or a skill that
/// materializes as a task of `task_type`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropositionBinding {
    pub kind: PropositionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_type: Option<String>,
    #[serde(default)]
    pub priority_rank: u32,
    /// Instances of the same family are ordered by `priority_rank`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reaction {
    pub event_id: String,
    pub trigger: Ltl,
    pub response: Ltl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissionSpec {
    /// `None` when every conjunct is a reaction.
    pub nominal: Option<Ltl>,
    pub reactions: Vec<Reaction>,
    #[serde(default)]
    pub proposition_bindings: BTreeMap<String, PropositionBinding>,
    /// Declared exclusion pairs, by proposition or task-type name.
    #[serde(default)]
    pub exclusions: Vec<(String, String)>,
}

impl MissionSpec {
    pub fn event_ids(&self) -> impl Iterator<Item = &str> {
        self.reactions.iter().map(|r| r.event_id.as_str())
    }

    pub fn reaction(&self, event_id: &str) -> Option<&Reaction> {
        self.reactions.iter().find(|r| r.event_id == event_id)
    }

    /// Resolves the binding for `prop`. Unbound propositions default to
    /// observations when they occur in some trigger, skills otherwise.
    pub fn binding(&self, prop: &str) -> PropositionBinding {
        if let Some(b) = self.proposition_bindings.get(prop) {
            return b.clone();
        }
        let observed = self.reactions.iter().any(|r| r.trigger.atoms().contains(prop));
        PropositionBinding {
            kind: if observed {
                PropositionKind::Observation
            } else {
                PropositionKind::Skill
            },
            task_type: None,
            priority_rank: 0,
            family: None,
        }
    }

    pub fn is_skill(&self, prop: &str) -> bool {
        self.binding(prop).kind == PropositionKind::Skill
    }

    /// Task type a skill proposition maps to (the proposition name by default).
    pub fn task_type_of(&self, prop: &str) -> String {
        self.binding(prop).task_type.unwrap_or_else(|| prop.to_string())
    }
}

fn as_reaction(f: &Ltl) -> Option<(&Ltl, &Ltl)> {
    match f {
        Ltl::Implies(trigger, response)
            if trigger.is_propositional() && matches!(**response, Ltl::Eventually(_)) =>
        {
            Some((trigger, response))
        }
        _ => None,
    }
}

/// Decomposes `f` into nominal and reactive parts.
///
/// Each top-level `G` has the `G` distributed over its inner conjunction;
/// inner conjuncts shaped `trigger -> F response` with a propositional
/// trigger become reactions (numbered `e1`, `e2`, ... left to right), the
/// others stay in the nominal formula wrapped in `G`. Conjuncts that match
/// neither shape are kept in the nominal formula.
pub fn decompose_template(f: &Ltl) -> MissionSpec {
    let mut nominal = Vec::new();
    let mut reactions = Vec::new();
    for c in f.conjuncts() {
        let Ltl::Always(inner) = c else {
            nominal.push(c.clone());
            continue;
        };
        let parts = inner.conjuncts();
        if parts.iter().all(|p| as_reaction(p).is_none()) {
            if !matches!(**inner, Ltl::Eventually(_)) && !inner.is_propositional() {
                tracing::debug!(conjunct = %c, "conjunct outside the reactive fragment kept as nominal");
            }
            nominal.push(c.clone());
            continue;
        }
        for p in parts {
            match as_reaction(p) {
                Some((trigger, response)) => reactions.push(Reaction {
                    event_id: format!("e{}", reactions.len() + 1),
                    trigger: trigger.clone(),
                    response: response.clone(),
                }),
                None => nominal.push(Ltl::always(p.clone())),
            }
        }
    }
    MissionSpec {
        nominal: Ltl::conjunction(nominal),
        reactions,
        proposition_bindings: BTreeMap::new(),
        exclusions: Vec::new(),
    }
}
