//! Prompt assembly from the versioned templates under `prompts/`.

use sha2::{Digest, Sha256};

use super::types::RobotSpec;
use super::Stage;

pub const PROMPT_VERSION: &str = "v1";

const INSTRUCTION: &str = include_str!("../../prompts/v1/instruction.txt");
const CONTEXT: &str = include_str!("../../prompts/v1/context.txt");
const META: &str = include_str!("../../prompts/v1/meta.txt");
const GUIDE: &str = include_str!("../../prompts/v1/guide.txt");
const SEQUENCES: &str = include_str!("../../prompts/v1/sequences.txt");

fn template(stage: Stage) -> &'static str {
    match stage {
        Stage::Context => CONTEXT,
        Stage::Meta => META,
        Stage::Guide => GUIDE,
        Stage::Sequences => SEQUENCES,
    }
}

pub(crate) fn team_description(robots: &[RobotSpec]) -> String {
    let mut out = String::from("Robots Team Description:\n");
    let mut seen = Vec::new();
    for r in robots {
        if seen.contains(&r.robot_type) {
            continue;
        }
        seen.push(r.robot_type.clone());
        let skills: Vec<String> = r
            .skills
            .iter()
            .map(|s| format!("{} ({} s)", s.name, s.duration_s))
            .collect();
        let desc = if r.description.is_empty() { String::new() } else { format!("{} ", r.description.trim_end()) };
        out.push_str(&format!("- {}: {desc}Skills: {}.\n", r.robot_type, skills.join(", ")));
    }
    out
}

/// Instruction, team description, stage block, then the machine-readable
/// trailer (`Stage:`, `Task:`, `Resources:`).
pub(crate) fn render(
    stage: Stage,
    robots: &[RobotSpec],
    vars: &[(&str, String)],
    tasks: &[String],
    resources: &[String],
) -> String {
    let mut block = template(stage).to_string();
    for (k, v) in vars {
        block = block.replace(&format!("{{{k}}}"), v);
    }
    format!(
        "{}\n{}\n{}\nStage: {}\nTask: [{}]\nResources: [{}]\n",
        INSTRUCTION,
        team_description(robots),
        block,
        stage,
        tasks.join(", "),
        resources.join(", ")
    )
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}
