use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::Context;
use dexter_core::orchestrator::{Mode, Operator, Orchestrator, PlanClock, RunConfig};
use dexter_core::runlog::{Record, RunLog};
use dexter_core::world::{load_scenario, Scenario};

use crate::backend::BackendChoice;

pub type Listener = Box<dyn FnMut(&Record) + Send>;

/// Everything needed to start a run apart from the scenario itself.
#[derive(Debug, Clone)]
pub struct Launch {
    pub backend: BackendChoice,
    pub config: RunConfig,
    pub runlog: Option<PathBuf>,
}

impl Launch {
    pub fn new(backend: BackendChoice) -> Self {
        let config = RunConfig {
            backend: backend.label(),
            clock: if backend.is_mock() { PlanClock::Virtual } else { PlanClock::Wall },
            ..RunConfig::default()
        };
        Self {
            backend,
            config,
            runlog: None,
        }
    }

    /// Builds the orchestrator, which plans the initial mission. `listener`
    /// sees every record, including the opening one.
    pub fn start(
        &self,
        scenario: &Scenario,
        mode: Mode,
        seed: u64,
        operator: Box<dyn Operator>,
        listener: Option<Listener>,
    ) -> anyhow::Result<Orchestrator> {
        let backend = self.backend.build(scenario)?;
        let mut log = match &self.runlog {
            Some(path) => {
                let f = File::create(path).with_context(|| format!("creating run log {}", path.display()))?;
                RunLog::with_sink(Box::new(BufWriter::new(f)))
            }
            None => RunLog::new(),
        };
        if let Some(l) = listener {
            log.subscribe(l);
        }
        let config = RunConfig {
            mode,
            seed,
            ..self.config.clone()
        };
        Ok(Orchestrator::new(scenario, config, backend, operator, log)?)
    }
}

pub fn read_scenario(path: &std::path::Path) -> anyhow::Result<Scenario> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    load_scenario(&text).with_context(|| format!("loading scenario {}", path.display()))
}
