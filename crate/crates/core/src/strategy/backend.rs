use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::Stage;

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum BackendError {
    #[error("transport error: {message}")]
    Transport { message: String },
    #[error("backend timed out")]
    Timeout,
    #[error("no rule for stage {stage} with tasks {tasks:?} and resources {resources:?}")]
    MissingRule {
        stage: String,
        tasks: Vec<String>,
        resources: Vec<String>,
    },
}

/// A text-completion service.
pub trait GenerationBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
    fn name(&self) -> &str;
    fn is_deterministic(&self) -> bool;
}

/// One row of the mock rule table. A rule fires when the prompt is for
/// `stage`, lists `task_type` among its tasks (or the rule has no task
/// type) and lists every resource in `resources`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_type: Option<String>,
    #[serde(default)]
    pub resources: BTreeSet<String>,
    pub output: Value,
}

/// Offline backend answering from a rule table. Every matching rule
/// contributes; outputs are merged in table order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockBackend {
    pub rules: Vec<MockRule>,
}

pub fn mock_backend(rules: Vec<MockRule>) -> MockBackend {
    MockBackend { rules }
}

/// Machine-readable trailer of a prompt.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptKey {
    pub stage: Option<Stage>,
    pub tasks: Vec<String>,
    pub resources: Vec<String>,
}

fn parse_list(s: &str) -> Vec<String> {
    s.trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn parse_prompt_key(prompt: &str) -> PromptKey {
    let mut key = PromptKey::default();
    for line in prompt.lines() {
        if let Some(rest) = line.strip_prefix("Stage:") {
            key.stage = serde_json::from_value(Value::String(rest.trim().to_string())).ok();
        } else if let Some(rest) = line.strip_prefix("Task:") {
            key.tasks = parse_list(rest);
        } else if let Some(rest) = line.strip_prefix("Resources:") {
            key.resources = parse_list(rest);
        }
    }
    key
}

/// Merges two rule outputs: arrays are concatenated without duplicates,
/// objects merged key-wise, strings joined line by line without duplicates.
fn merge(into: &mut Value, other: &Value) {
    match (into, other) {
        (Value::Array(a), Value::Array(b)) => {
            for v in b {
                if !a.contains(v) {
                    a.push(v.clone());
                }
            }
        }
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in b {
                match a.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        a.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (Value::String(a), Value::String(b)) => {
            for line in b.lines() {
                if !a.lines().any(|l| l == line) {
                    if !a.is_empty() {
                        a.push('\n');
                    }
                    a.push_str(line);
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

impl MockBackend {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// The merged output for a prompt key, before rendering.
    pub fn lookup(&self, key: &PromptKey) -> Option<Value> {
        let stage = key.stage?;
        let mut acc: Option<Value> = None;
        for r in &self.rules {
            let task_ok = r.task_type.as_ref().is_none_or(|t| key.tasks.contains(t));
            let res_ok = r.resources.iter().all(|x| key.resources.contains(x));
            if r.stage == stage && task_ok && res_ok {
                match &mut acc {
                    None => acc = Some(r.output.clone()),
                    Some(v) => merge(v, &r.output),
                }
            }
        }
        acc
    }
}

impl GenerationBackend for MockBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let key = parse_prompt_key(prompt);
        let out = self.lookup(&key).ok_or_else(|| BackendError::MissingRule {
            stage: key.stage.map(|s| s.to_string()).unwrap_or_default(),
            tasks: key.tasks.clone(),
            resources: key.resources.clone(),
        })?;
        Ok(match out {
            Value::String(s) => s,
            v => v.to_string(),
        })
    }

    fn name(&self) -> &str {
        "mock"
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn table() -> MockBackend {
        mock_backend(vec![
            MockRule {
                stage: Stage::Context,
                task_type: Some("small_fire".into()),
                resources: BTreeSet::from(["water".into()]),
                output: json!({"tasks": ["small_fire"], "resources": ["water"]}),
            },
            MockRule {
                stage: Stage::Context,
                task_type: Some("mild_injury".into()),
                resources: BTreeSet::new(),
                output: json!({"tasks": ["mild_injury"], "resources": []}),
            },
        ])
    }

    #[test]
    fn canned_output() {
        let out = table()
            .complete("Stage: context\nTask: [small_fire]\nResources: [water]\n")
            .unwrap();
        assert_eq!(out, r#"{"resources":["water"],"tasks":["small_fire"]}"#);
    }

    #[test]
    fn missing_rule() {
        let e = table()
            .complete("Stage: context\nTask: [small_fire]\nResources: []\n")
            .unwrap_err();
        assert!(matches!(e, BackendError::MissingRule { .. }));
    }

    #[test]
    fn matching_rules_are_merged() {
        let out = table()
            .complete("Stage: context\nTask: [small_fire, mild_injury]\nResources: [water, sand]\n")
            .unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["tasks"], json!(["small_fire", "mild_injury"]));
        assert_eq!(v["resources"], json!(["water"]));
    }
}
