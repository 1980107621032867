use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "swarmfield", version, about = "Swarm safety-filter sandbox")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run a scenario as fast as possible and write log.jsonl, report.json and metrics.csv.
    Run(RunArgs),
    /// Recompute the report of a log and print it as JSON.
    Replay(ReplayArgs),
    /// Print the aggregates of a report.json or log.jsonl.
    Report(ReportArgs),
    /// Host the HTTP/WebSocket gateway.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlannerKind {
    Oracle,
    Llm,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Built-in scenario name (e.g. swap_n10, static_hazard) or path to a scenario JSON file.
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub agents: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulated seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long, value_enum, default_value_t = PlannerKind::Oracle)]
    pub planner: PlannerKind,
    /// Strip code fences and prose around model replies before parsing.
    #[arg(long)]
    pub lenient_parse: bool,
    /// Disable the stall escape nudge.
    #[arg(long)]
    pub no_escape: bool,
    /// Pace the loop at its tick rate against the wall clock.
    #[arg(long)]
    pub realtime: bool,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub log: PathBuf,
    /// Also re-simulate the run from the log's scenario and recorded model
    /// replies and check that every line comes out the same.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A report.json or a log.jsonl.
    pub path: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML config file; environment variables override it, flags override both.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<SocketAddr>,
    #[arg(long, value_enum)]
    pub mode: Option<PlannerKind>,
    /// Scenario to start a live session with.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub agents: Option<usize>,
}
