use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::backend::{BackendError, GenerationBackend};
use super::prompts::{prompt_hash, render};
use super::types::{fleet_capabilities, LayeredDag, RobotSpec, StrategyDag, StrategyParseError};
use super::Stage;

/// Retries per stage after the first attempt.
pub const MAX_RETRIES: usize = 2;
pub const MAX_STRATEGIES_PER_TASK: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub t: f64,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub tasks: Vec<String>,
    pub resources: Vec<String>,
    #[serde(default)]
    pub history: Vec<HistoryEntry>,
    #[serde(default)]
    pub free_text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextSummary {
    pub tasks: Vec<String>,
    pub resources: Vec<String>,
    #[serde(default)]
    pub history: Vec<String>,
    #[serde(default)]
    pub analysis: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub condition: String,
    pub directive: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPolicy {
    pub rules: Vec<PolicyRule>,
    pub version: u64,
}

impl MetaPolicy {
    pub fn render(&self) -> String {
        if self.rules.is_empty() {
            return "(none)".into();
        }
        self.rules
            .iter()
            .map(|r| format!("If {}, then: {}", r.condition, r.directive))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuideStep {
    pub robot_type: String,
    pub skill: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outline {
    pub task_type: String,
    #[serde(default)]
    pub summary: String,
    pub steps: Vec<GuideStep>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskGuide {
    pub outlines: Vec<Outline>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum ValidationError {
    #[error("unknown names {names:?}")]
    UnknownNames { names: Vec<String> },
    #[error("no capable robot for task `{task}`")]
    NoCapableRobot { task: String },
    #[error("robot type `{robot_type}` has no skill `{skill}`")]
    MissingSkill { robot_type: String, skill: String },
    #[error("no strategy generated for task `{task}`")]
    NoStrategy { task: String },
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageError {
    #[error(transparent)]
    Backend { error: BackendError },
    #[error("could not parse output: {message}")]
    Parse { message: String },
    #[error(transparent)]
    Validation { error: ValidationError },
    #[error("strategy rejected: {error}")]
    Strategy { error: StrategyParseError, raw: String },
}

impl From<ValidationError> for StageError {
    fn from(error: ValidationError) -> Self {
        StageError::Validation { error }
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("{stage} stage failed after {attempts} attempts: {cause}")]
pub struct PipelineError {
    pub stage: Stage,
    pub attempts: usize,
    pub cause: StageError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub stage: Stage,
    pub attempt: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutput {
    /// Strategies whose ids were not yet in the layered DAG.
    pub delta: LayeredDag,
    pub policy: MetaPolicy,
    pub summary: Option<ContextSummary>,
    pub guide: Option<SubtaskGuide>,
    pub prompts: Vec<PromptRecord>,
    pub backend_calls: usize,
}

struct Runner<'a> {
    backend: &'a dyn GenerationBackend,
    robots: &'a [RobotSpec],
    prompts: Vec<PromptRecord>,
    calls: usize,
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, StageError> {
    serde_json::from_str(text.trim()).map_err(|e| StageError::Parse { message: e.to_string() })
}

fn unknown(names: impl IntoIterator<Item = String>) -> Result<(), StageError> {
    let names: Vec<String> = names.into_iter().collect();
    if names.is_empty() {
        Ok(())
    } else {
        Err(ValidationError::UnknownNames { names }.into())
    }
}

impl<'a> Runner<'a> {
    fn new(backend: &'a dyn GenerationBackend, robots: &'a [RobotSpec]) -> Self {
        Self {
            backend,
            robots,
            prompts: Vec::new(),
            calls: 0,
        }
    }

    fn run<T>(
        &mut self,
        stage: Stage,
        base: String,
        mut accept: impl FnMut(&str) -> Result<T, StageError>,
    ) -> Result<T, PipelineError> {
        let mut prompt = base.clone();
        let mut last = None;
        for attempt in 0..=MAX_RETRIES {
            self.prompts.push(PromptRecord {
                stage,
                attempt,
                sha256: prompt_hash(&prompt),
            });
            self.calls += 1;
            let result = self
                .backend
                .complete(&prompt)
                .map_err(|error| StageError::Backend { error })
                .and_then(|text| accept(&text));
            match result {
                Ok(v) => return Ok(v),
                Err(e) => {
                    tracing::debug!(%stage, attempt, error = %e, "stage attempt rejected");
                    prompt = format!(
                        "{base}\nYour previous answer was rejected: {e}\nAnswer again in exactly the requested format.\n"
                    );
                    last = Some(e);
                }
            }
        }
        Err(PipelineError {
            stage,
            attempts: MAX_RETRIES + 1,
            cause: last.expect("at least one attempt"),
        })
    }

    fn context(&mut self, scene: &SceneDescription) -> Result<ContextSummary, PipelineError> {
        let history = if scene.history.is_empty() {
            "(none)".to_string()
        } else {
            scene
                .history
                .iter()
                .map(|h| format!("- [{:.1} s] {}", h.t, h.text))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let prompt = render(
            Stage::Context,
            self.robots,
            &[("history", history), ("free_text", scene.free_text.clone())],
            &scene.tasks,
            &scene.resources,
        );
        self.run(Stage::Context, prompt, |text| {
            let s: ContextSummary = parse_json(text)?;
            unknown(
                s.tasks
                    .iter()
                    .filter(|t| !scene.tasks.contains(t))
                    .chain(s.resources.iter().filter(|r| !scene.resources.contains(r)))
                    .chain(s.history.iter().filter(|h| !scene.history.iter().any(|e| &&e.text == h)))
                    .cloned(),
            )?;
            Ok(s)
        })
    }

    fn meta(&mut self, policy: &MetaPolicy, summary: &ContextSummary) -> Result<MetaPolicy, PipelineError> {
        let prompt = render(
            Stage::Meta,
            self.robots,
            &[
                ("version", policy.version.to_string()),
                ("policy", policy.render()),
                ("analysis", summary.analysis.clone()),
            ],
            &summary.tasks,
            &summary.resources,
        );
        self.run(Stage::Meta, prompt, |text| {
            let rules = parse_rules(text)?;
            let mut next = policy.clone();
            for r in rules {
                match next.rules.iter_mut().find(|x| x.condition == r.condition) {
                    Some(slot) => slot.directive = r.directive,
                    None => next.rules.push(r),
                }
            }
            next.version = policy.version + 1;
            Ok(next)
        })
    }

    fn guide(&mut self, summary: &ContextSummary, policy: &MetaPolicy) -> Result<SubtaskGuide, PipelineError> {
        let prompt = render(
            Stage::Guide,
            self.robots,
            &[("policy", policy.render())],
            &summary.tasks,
            &summary.resources,
        );
        let caps = fleet_capabilities(self.robots);
        self.run(Stage::Guide, prompt, |text| {
            let outlines: Vec<Outline> = parse_json(text)?;
            unknown(
                outlines
                    .iter()
                    .map(|o| &o.task_type)
                    .filter(|t| !summary.tasks.contains(t))
                    .cloned()
                    .collect::<BTreeSet<_>>(),
            )?;
            for o in &outlines {
                for s in &o.steps {
                    let Some(skills) = caps.get(s.robot_type.as_str()) else {
                        return Err(ValidationError::UnknownNames {
                            names: vec![s.robot_type.clone()],
                        }
                        .into());
                    };
                    if !skills.contains(s.skill.as_str()) {
                        return Err(ValidationError::NoCapableRobot {
                            task: o.task_type.clone(),
                        }
                        .into());
                    }
                }
            }
            for t in &summary.tasks {
                if !outlines.iter().any(|o| &o.task_type == t && !o.steps.is_empty()) {
                    return Err(ValidationError::NoCapableRobot { task: t.clone() }.into());
                }
            }
            Ok(SubtaskGuide { outlines })
        })
    }

    fn sequences(
        &mut self,
        guide: &SubtaskGuide,
        policy: &MetaPolicy,
        summary: &ContextSummary,
    ) -> Result<Vec<StrategyDag>, PipelineError> {
        let guide_text = serde_json::to_string(&guide.outlines).unwrap_or_default();
        let tasks: Vec<String> = guide
            .outlines
            .iter()
            .map(|o| o.task_type.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let prompt = render(
            Stage::Sequences,
            self.robots,
            &[("policy", policy.render()), ("guide", guide_text)],
            &tasks,
            &summary.resources,
        );
        let robots = self.robots;
        self.run(Stage::Sequences, prompt, |text| {
            let raw: Vec<serde_json::Value> = parse_json(text)?;
            let mut out: Vec<StrategyDag> = Vec::new();
            for v in raw {
                let doc = v.to_string();
                let reject = |error| StageError::Strategy { error, raw: doc.clone() };
                let s = super::parse_strategy_json(&doc).map_err(reject)?;
                s.validate_against(robots, &summary.resources).map_err(reject)?;
                if !tasks.contains(&s.task_type) {
                    return Err(ValidationError::UnknownNames {
                        names: vec![s.task_type.clone()],
                    }
                    .into());
                }
                let same_task = out.iter().filter(|o| o.task_type == s.task_type).count();
                if same_task < MAX_STRATEGIES_PER_TASK && !out.iter().any(|o| o.strategy_id == s.strategy_id) {
                    out.push(s);
                }
            }
            for t in &tasks {
                if !out.iter().any(|s| &s.task_type == t) {
                    return Err(ValidationError::NoStrategy { task: t.clone() }.into());
                }
            }
            Ok(out)
        })
    }
}

/// Parses `If <condition>, then: <directive>` lines; blank lines are skipped.
fn parse_rules(text: &str) -> Result<Vec<PolicyRule>, StageError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let rest = line.strip_prefix("If ").ok_or_else(|| StageError::Parse {
                message: format!("rule must start with `If `: {line}"),
            })?;
            let (cond, directive) = rest.split_once(", then:").ok_or_else(|| StageError::Parse {
                message: format!("rule lacks `, then:`: {line}"),
            })?;
            let (cond, directive) = (cond.trim(), directive.trim());
            if cond.is_empty() || directive.is_empty() {
                return Err(StageError::Parse {
                    message: format!("empty condition or directive: {line}"),
                });
            }
            Ok(PolicyRule {
                condition: cond.to_string(),
                directive: directive.to_string(),
            })
        })
        .collect()
}

pub fn stage_context_analysis(
    scene: &SceneDescription,
    robots: &[RobotSpec],
    backend: &dyn GenerationBackend,
) -> Result<ContextSummary, PipelineError> {
    Runner::new(backend, robots).context(scene)
}

pub fn stage_meta_policy_tuning(
    policy: &MetaPolicy,
    summary: &ContextSummary,
    robots: &[RobotSpec],
    backend: &dyn GenerationBackend,
) -> Result<MetaPolicy, PipelineError> {
    Runner::new(backend, robots).meta(policy, summary)
}

pub fn stage_subtask_guide(
    summary: &ContextSummary,
    policy: &MetaPolicy,
    robots: &[RobotSpec],
    backend: &dyn GenerationBackend,
) -> Result<SubtaskGuide, PipelineError> {
    Runner::new(backend, robots).guide(summary, policy)
}

pub fn stage_subtask_sequences(
    guide: &SubtaskGuide,
    policy: &MetaPolicy,
    summary: &ContextSummary,
    robots: &[RobotSpec],
    backend: &dyn GenerationBackend,
) -> Result<Vec<StrategyDag>, PipelineError> {
    Runner::new(backend, robots).sequences(guide, policy, summary)
}

/// Runs the four stages in order. The returned delta holds only strategies
/// whose ids are absent from `existing`.
pub fn run_generation_pipeline(
    scene: &SceneDescription,
    robots: &[RobotSpec],
    policy: &MetaPolicy,
    existing: &LayeredDag,
    backend: &dyn GenerationBackend,
) -> Result<GenerationOutput, PipelineError> {
    if scene.tasks.is_empty() {
        return Ok(GenerationOutput {
            policy: MetaPolicy {
                rules: policy.rules.clone(),
                version: policy.version + 1,
            },
            ..GenerationOutput::default()
        });
    }
    let mut r = Runner::new(backend, robots);
    let summary = r.context(scene)?;
    let policy = r.meta(policy, &summary)?;
    let guide = r.guide(&summary, &policy)?;
    let strategies = r.sequences(&guide, &policy, &summary)?;
    let mut delta = LayeredDag::default();
    for s in strategies {
        if !existing.contains_id(&s.strategy_id) {
            delta.insert(s);
        }
    }
    Ok(GenerationOutput {
        delta,
        policy,
        summary: Some(summary),
        guide: Some(guide),
        prompts: r.prompts,
        backend_calls: r.calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::{MockBackend, MockRule, Skill};
    use serde_json::json;

    fn robots() -> Vec<RobotSpec> {
        vec![RobotSpec {
            id: "fd1".into(),
            robot_type: "fire_drone".into(),
            skills: vec![
                Skill { name: "refill_water".into(), duration_s: 3.0 },
                Skill { name: "spray_water".into(), duration_s: 4.0 },
            ],
            velocity_mps: 2.0,
            description: "Carries a water tank.".into(),
        }]
    }

    fn rule(stage: Stage, res: &[&str], output: serde_json::Value) -> MockRule {
        MockRule {
            stage,
            task_type: Some("small_fire".into()),
            resources: res.iter().map(|s| s.to_string()).collect(),
            output,
        }
    }

    fn fire_table(context_resources: serde_json::Value) -> MockBackend {
        MockBackend {
            rules: vec![
                rule(Stage::Context, &[], json!({"tasks": ["small_fire"], "resources": context_resources})),
                rule(Stage::Meta, &[], json!("")),
                rule(
                    Stage::Meta,
                    &["water"],
                    json!("If a fire is detected and water is available, then: refill water tanks first, then spray water"),
                ),
                rule(
                    Stage::Guide,
                    &["water"],
                    json!([{"task_type": "small_fire", "summary": "refill then spray",
                            "steps": [{"robot_type": "fire_drone", "skill": "refill_water"},
                                      {"robot_type": "fire_drone", "skill": "spray_water"}]}]),
                ),
                rule(
                    Stage::Sequences,
                    &["water"],
                    json!([{"strategy_id": "sf_water", "task_type": "small_fire", "subtasks": [
                        {"index": 0, "robot_type": "fire_drone", "action": "refill_water", "target": "water", "dependencies": []},
                        {"index": 1, "robot_type": "fire_drone", "action": "spray_water", "target": "task",
                         "done_by_same_robot_as": 0, "dependencies": [0]}]}]),
                ),
            ],
        }
    }

    fn scene() -> SceneDescription {
        SceneDescription {
            tasks: vec!["small_fire".into()],
            resources: vec!["water".into()],
            ..Default::default()
        }
    }

    #[test]
    fn fire_scene_yields_one_strategy() {
        let out = run_generation_pipeline(&scene(), &robots(), &MetaPolicy::default(), &LayeredDag::default(), &fire_table(json!(["water"]))).unwrap();
        assert_eq!(out.delta.strategies_for("small_fire").len(), 1);
        assert_eq!(out.delta.strategy_count(), 1);
        assert_eq!(out.policy.version, 1);
        assert_eq!(out.policy.rules.len(), 1);
        assert_eq!(out.backend_calls, 4);
        assert_eq!(out.prompts.len(), 4);
    }

    #[test]
    fn existing_ids_are_excluded_from_delta() {
        let b = fire_table(json!(["water"]));
        let first = run_generation_pipeline(&scene(), &robots(), &MetaPolicy::default(), &LayeredDag::default(), &b).unwrap();
        let again = run_generation_pipeline(&scene(), &robots(), &first.policy, &first.delta, &b).unwrap();
        assert!(again.delta.is_empty());
        assert_eq!(again.policy.rules, first.policy.rules);
        assert_eq!(again.policy.version, 2);
    }

    #[test]
    fn empty_scene_bumps_version_only() {
        let out = run_generation_pipeline(
            &SceneDescription::default(),
            &robots(),
            &MetaPolicy::default(),
            &LayeredDag::default(),
            &MockBackend::default(),
        )
        .unwrap();
        assert!(out.delta.is_empty());
        assert_eq!(out.policy.version, 1);
        assert_eq!(out.backend_calls, 0);
    }

    #[test]
    fn hallucinated_resource_rejected() {
        let e = stage_context_analysis(&scene(), &robots(), &fire_table(json!(["lava"]))).unwrap_err();
        assert_eq!(e.stage, Stage::Context);
        assert_eq!(e.attempts, MAX_RETRIES + 1);
        assert_eq!(
            e.cause,
            StageError::Validation {
                error: ValidationError::UnknownNames { names: vec!["lava".into()] }
            }
        );
    }

    #[test]
    fn no_capable_robot() {
        let summary = ContextSummary {
            tasks: vec!["small_fire".into()],
            resources: vec![],
            ..Default::default()
        };
        let b = MockBackend {
            rules: vec![rule(Stage::Guide, &[], json!([]))],
        };
        let e = stage_subtask_guide(&summary, &MetaPolicy::default(), &robots(), &b).unwrap_err();
        assert_eq!(
            e.cause,
            StageError::Validation {
                error: ValidationError::NoCapableRobot { task: "small_fire".into() }
            }
        );
    }

    #[test]
    fn rule_parsing() {
        assert!(parse_rules("If x, then: y\n\nIf z, then: w").unwrap().len() == 2);
        assert!(parse_rules("Always spray").is_err());
        assert!(parse_rules("If , then: y").is_err());
    }

    #[test]
    fn meta_delta_replaces_same_condition() {
        let p = MetaPolicy {
            rules: vec![PolicyRule { condition: "c".into(), directive: "old".into() }],
            version: 3,
        };
        let b = MockBackend {
            rules: vec![MockRule {
                stage: Stage::Meta,
                task_type: None,
                resources: Default::default(),
                output: json!("If c, then: new\nIf d, then: more"),
            }],
        };
        let s = ContextSummary { tasks: vec!["small_fire".into()], ..Default::default() };
        let next = stage_meta_policy_tuning(&p, &s, &robots(), &b).unwrap();
        assert_eq!(next.version, 4);
        assert_eq!(next.rules[0].directive, "new");
        assert_eq!(next.rules.len(), 2);
    }
}
