//! Command-line runner and HTTP service around `dexter-core`.

pub mod backend;
pub mod run;
pub mod service;

pub use backend::{BackendChoice, HttpBackend};
pub use run::{read_scenario, Launch};
pub use service::{router, serve, App, RunRequest, Service, View};
