mod commands;
mod error;
mod output;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hierion_core::model::Tick;
use hierion_core::scenario::{CostOrder, FiringPolicy};

#[derive(Parser, Debug)]
#[command(name = "hierion", version, about = "Retrospective analysis and directive modeling of hierarchical systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Append monitoring rows from a CSV file to the event store.
    Ingest(IngestArgs),
    /// Replay stored monitoring data against a canonical diagram.
    Retrospect(RetrospectArgs),
    /// Run a control scenario and write traces and metrics.
    Simulate(SimulateArgs),
    /// Search for a rule sequence meeting a partial diagram.
    Forecast(ForecastArgs),
    /// Score a simulation run or execute a goal tree.
    Evaluate(EvaluateArgs),
    /// Turn report files into plot-ready CSV tables.
    Export(ExportArgs),
    /// Start the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct BundleArgs {
    /// Model bundle (JSON).
    #[arg(long)]
    pub bundle: PathBuf,
    /// Warn about unknown bundle fields instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Event store log; defaults to $HIERION_STORE.
    #[arg(long, env = "HIERION_STORE")]
    pub store: PathBuf,
    /// Monitoring CSV with a header row.
    #[arg(long)]
    pub csv: PathBuf,
    /// JSON column mapping {source, object, parameter, tick, value}.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Write the ingest report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RetrospectArgs {
    #[command(flatten)]
    pub bundle: BundleArgs,
    #[arg(long, env = "HIERION_STORE")]
    pub store: PathBuf,
    /// Canonical diagram id.
    #[arg(long)]
    pub diagram: String,
    #[arg(long)]
    pub from: Tick,
    #[arg(long)]
    pub to: Tick,
    /// Comma-separated snapshot ticks; defaults to the diagram's schedule.
    #[arg(long, value_delimiter = ',')]
    pub snapshots: Vec<Tick>,
    /// Directory for the report and tables; stdout when absent.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub bundle: BundleArgs,
    #[arg(long)]
    pub scenario: String,
    /// Defaults to the scenario's own horizon.
    #[arg(long)]
    pub horizon: Option<Tick>,
    #[arg(long, value_enum)]
    pub firing: Option<Firing>,
    /// JSON overrides for horizon, firing, order and max_expansions.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InitialArgs {
    /// JSON system state {states, pool, clock?, idle_since?}.
    #[arg(long, conflicts_with_all = ["state", "pool"])]
    pub initial: Option<PathBuf>,
    /// Subsystem state as DIAGRAM=STATE; repeatable.
    #[arg(long, value_parser = parse_pair)]
    pub state: Vec<(String, String)>,
    #[arg(long, default_value_t = 0.0)]
    pub pool: f64,
}

#[derive(Args, Debug)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub bundle: BundleArgs,
    /// Partial diagram id.
    #[arg(long)]
    pub partial: String,
    #[command(flatten)]
    pub initial: InitialArgs,
    #[arg(long, value_enum)]
    pub order: Option<Order>,
    #[arg(long)]
    pub max_expansions: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Simulation run file written by `simulate`.
    #[arg(long, required_unless_present = "goal_tree", conflicts_with = "goal_tree")]
    pub run: Option<PathBuf>,
    #[arg(long, required_unless_present = "run")]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub lenient: bool,
    /// Partial diagram to check the run against.
    #[arg(long, requires = "bundle")]
    pub partial: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    pub resources_spent: f64,
    /// Goal tree to execute from the initial state.
    #[arg(long, requires = "bundle")]
    pub goal_tree: Option<String>,
    #[command(flatten)]
    pub initial: InitialArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Report files from retrospect or simulate; repeatable.
    #[arg(long = "report", required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Event store backing retrospect requests without inline rows.
    #[arg(long, env = "HIERION_STORE")]
    pub store: Option<PathBuf>,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
pub enum Firing {
    Strict,
    Lenient,
}

impl From<Firing> for FiringPolicy {
    fn from(f: Firing) -> Self {
        match f {
            Firing::Strict => FiringPolicy::Strict,
            Firing::Lenient => FiringPolicy::Lenient,
        }
    }
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
pub enum Order {
    TicksThenResources,
    ResourcesThenTicks,
}

impl From<Order> for CostOrder {
    fn from(o: Order) -> Self {
        match o {
            Order::TicksThenResources => CostOrder::TicksThenResources,
            Order::ResourcesThenTicks => CostOrder::ResourcesThenTicks,
        }
    }
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected DIAGRAM=STATE, got `{s}`")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let raw: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&raw, a),
        Command::Retrospect(a) => commands::retrospect(&raw, a),
        Command::Simulate(a) => commands::simulate(&raw, a),
        Command::Forecast(a) => commands::forecast(&raw, a),
        Command::Evaluate(a) => commands::evaluate(&raw, a),
        Command::Export(a) => commands::export(&raw, a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
