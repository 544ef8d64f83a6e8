//! Reactive LTL missions and the task poset derived from them.

mod file;
mod ltl;
mod poset;
mod template;

pub use file::{load_mission, MissionError, MissionFile};
pub use ltl::{parse_ltl, Ltl, SyntaxError};
pub use poset::{
    build_catalog, build_task_poset, poset_to_dot, validate_poset, PosetError, PosetViolation,
    TaskCatalog, TaskId, TaskNode, TaskPoset, TaskTypeInfo,
};
pub use template::{decompose_template, MissionSpec, PropositionBinding, PropositionKind, Reaction};
