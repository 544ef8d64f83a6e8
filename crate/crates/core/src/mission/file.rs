//! JSON mission files: an LTL string plus proposition bindings and
//! exclusion pairs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ltl::{parse_ltl, SyntaxError};
use super::template::{decompose_template, MissionSpec, PropositionBinding};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionFile {
    pub ltl: String,
    #[serde(default)]
    pub propositions: BTreeMap<String, PropositionBinding>,
    #[serde(default)]
    pub exclusions: Vec<(String, String)>,
}

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("mission file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("mission formula: {0}")]
    Syntax(#[from] SyntaxError),
    #[error("exclusion pair ({0}, {0}) is reflexive")]
    ReflexiveExclusion(String),
}

impl MissionFile {
    pub fn to_spec(&self) -> Result<MissionSpec, MissionError> {
        if let Some((a, _)) = self.exclusions.iter().find(|(a, b)| a == b) {
            return Err(MissionError::ReflexiveExclusion(a.clone()));
        }
        let mut spec = decompose_template(&parse_ltl(&self.ltl)?);
        spec.proposition_bindings = self.propositions.clone();
        spec.exclusions = self.exclusions.clone();
        Ok(spec)
    }
}

/// Parses a mission file and decomposes its formula.
pub fn load_mission(text: &str) -> Result<MissionSpec, MissionError> {
    let file: MissionFile = serde_json::from_str(text)?;
    file.to_spec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mission::PropositionKind;

    #[test]
    fn bindings_and_exclusions_carried_over() {
        let spec = load_mission(
            r#"{"ltl": "G (fire -> F ext)",
                "propositions": {"ext": {"kind": "skill", "task_type": "small_fire", "priority_rank": 1}},
                "exclusions": [["small_fire", "large_fire"]]}"#,
        )
        .unwrap();
        assert_eq!(spec.task_type_of("ext"), "small_fire");
        assert_eq!(spec.binding("ext").kind, PropositionKind::Skill);
        assert_eq!(spec.exclusions.len(), 1);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(load_mission(r#"{"ltl": "G ("}"#), Err(MissionError::Syntax(_))));
        assert!(matches!(load_mission(r#"{"formula": "p"}"#), Err(MissionError::Json(_))));
        assert!(matches!(
            load_mission(r#"{"ltl": "p", "exclusions": [["a","a"]]}"#),
            Err(MissionError::ReflexiveExclusion(_))
        ));
    }
}
