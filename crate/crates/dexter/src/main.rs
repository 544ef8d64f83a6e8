use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};
use dexter::{read_scenario, BackendChoice, Launch, RunRequest, Service};
use dexter_core::orchestrator::{AbsentOperator, Mode, TriggerStats};
use dexter_core::world::MetricsReport;

#[derive(Parser)]
#[command(name = "dexter", version, about = "Plan and simulate a heterogeneous robot fleet on a scenario")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario. Exits 0 iff every revealed task was completed.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario JSON file.
    scenario: PathBuf,
    /// `interactive` waits for operator decisions; without --serve nobody
    /// answers and every checkpoint falls back to the validator on timeout.
    #[arg(long, default_value = "auto")]
    mode: Mode,
    /// `mock`, `mock:<rules.json>` or `http:<url>`.
    #[arg(long, default_value = "mock")]
    backend: BackendChoice,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Wall-clock limit for each planning search, in seconds.
    #[arg(long)]
    budget_s: Option<f64>,
    /// Use the additive lower bound in the search.
    #[arg(long)]
    paper_lb: bool,
    /// Serve the HTTP API and event stream on this address until interrupted.
    #[arg(long)]
    serve: Option<SocketAddr>,
    /// Write the run log (JSON lines) here.
    #[arg(long)]
    runlog: Option<PathBuf>,
    /// Wall-clock milliseconds per simulation tick when serving.
    #[arg(long, default_value_t = 100)]
    tick_ms: u64,
    /// Print the metrics and trigger statistics as JSON.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let Command::Run(args) = Cli::parse().command;
    match run(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(args: RunArgs) -> anyhow::Result<bool> {
    let scenario = read_scenario(&args.scenario)?;
    let mut launch = Launch::new(args.backend.clone());
    launch.config.budget_s = args.budget_s;
    launch.config.paper_lb = args.paper_lb;
    launch.runlog = args.runlog.clone();
    let seed = args.seed.unwrap_or(scenario.seed);

    let (metrics, stats) = match args.serve {
        None => {
            let mut o = launch.start(&scenario, args.mode, seed, Box::new(AbsentOperator), None)?;
            o.run_to_end();
            o.finish();
            (o.metrics(), o.trigger_stats())
        }
        Some(addr) => {
            let req = RunRequest {
                scenario: scenario.clone(),
                mode: args.mode,
                seed: Some(seed),
            };
            let service = Service::spawn(launch, req, Duration::from_millis(args.tick_ms))?;
            let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
                println!("listening on http://{}", listener.local_addr()?);
                let shutdown = async {
                    let _ = tokio::signal::ctrl_c().await;
                };
                dexter::serve(listener, service.app(), shutdown).await.context("serving")
            })?;
            let stats = service.app().view().stats;
            (service.shutdown(), stats)
        }
    };
    report(&scenario.name, &metrics, &stats, args.json);
    Ok(succeeded(&metrics))
}

fn succeeded(m: &MetricsReport) -> bool {
    m.success_rate == 1.0
}

fn report(name: &str, m: &MetricsReport, s: &TriggerStats, json: bool) {
    if json {
        let out = serde_json::json!({ "scenario": name, "metrics": m, "stats": s });
        println!("{}", serde_json::to_string_pretty(&out).expect("report serializes"));
        return;
    }
    println!("scenario  {name}");
    println!(
        "tasks     {}/{} completed  SR {:.3}  SPL {:.3}",
        m.tasks_completed, m.tasks_revealed, m.success_rate, m.spl
    );
    println!("plans     {}  mean time {:.2e} s  mean length {:.2}", m.plans, m.plan_time_s, m.plan_length);
    let pct = |k: &str| {
        s.percentages
            .iter()
            .find(|(m, _)| format!("{m:?}") == k)
            .map_or(0.0, |(_, p)| *p)
    };
    println!(
        "events    {}  MisComp {:.0}%  SubGen {:.0}%  SubAll {:.0}%  generation calls {}/{}",
        s.events,
        pct("MisComp"),
        pct("SubGen"),
        pct("SubAll"),
        s.llm_call_count,
        s.baseline_llm_call_count
    );
}
