//! Grid-world simulator: scenario files, scripted reveals, plan execution
//! and run metrics.

mod event;
mod metrics;
mod scenario;
mod sim;

pub use event::{Event, EventClass, EventKind, EventSource, SubtaskStatus};
pub use metrics::{compute_metrics, MetricsReport};
pub use scenario::{
    load_scenario, Disturbance, FleetEntry, MapSpec, Reveal, Scenario, ScenarioError, ScriptItem, StationSpec,
};
pub use sim::{Activity, RobotView, Simulation, TaskCompletion, DEFAULT_DT, SENSING_RADIUS};
