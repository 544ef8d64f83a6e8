//! Planning engine and fleet simulator for heterogeneous robot teams working
//! in partially known environments.
//!
//! The crate is split along the planning loop:
//!
//! * [`mission`] parses reactive LTL missions and maintains the task poset.
//! * [`strategy`] runs the staged text-generation pipeline that decomposes
//!   tasks into candidate subtask strategies.
//! * [`scheduler`] selects strategies and assigns/schedules subtasks with an
//!   exact branch-and-bound search.
//! * [`world`] is a deterministic grid-world simulator with scripted reveals.
//! * [`orchestrator`] routes online events to the modules that must react,
//!   with verification checkpoints between them.

pub mod geo;
pub mod mission;
pub mod orchestrator;
pub mod runlog;
pub mod scheduler;
pub mod strategy;
pub mod world;

pub use geo::{Cell, CellState, GridMap};
