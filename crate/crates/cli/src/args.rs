use std::path::PathBuf;

use clap::builder::TypedValueParser;
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "thermotwin", version, about = "Plant simulation, GRU surrogate training, twin rollout, telemetry and operator assistance")]
pub struct Cli {
    /// TOML or JSON settings file; explicit flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Log filter, e.g. `debug` or `thermotwin=trace`.
    #[arg(long, global = true, default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario through the plant simulator and write the channel CSV.
    Simulate(SimulateArgs),
    /// Generate the randomised-demand training dataset.
    GenDataset(GenDatasetArgs),
    /// Train a surrogate on a dataset CSV.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Evaluate(EvaluateArgs),
    /// Train every hidden-size × depth cell and tabulate losses.
    Sweep(SweepArgs),
    /// Roll the surrogate forward from a cold start at a fixed demand.
    Twin(TwinArgs),
    /// Serve the telemetry protocol and the HTTP gateway.
    Serve(ServeArgs),
    /// Ask the operator assistant a question.
    Assist(AssistArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file (TOML/JSON), or `staircase` for the built-in power staircase.
    #[arg(long, default_value = "staircase")]
    pub scenario: String,
    #[arg(long, default_value = "trajectory.csv")]
    pub out: PathBuf,
    /// Override the scenario's noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    /// Frames to generate (one per second).
    #[arg(long, default_value_t = 3706)]
    pub steps: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value = "dataset.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "dataset.csv")]
    pub data: PathBuf,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256, value_parser = clap::builder::PossibleValuesParser::new(["128", "256", "512", "1024"]).map(|s| s.parse::<usize>().expect("listed values parse")))]
    pub hidden: usize,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=3).map(usize::from))]
    pub layers: usize,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub weight_decay: f64,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 100)]
    pub patience: usize,
    #[arg(long, default_value_t = 2000)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-epoch loss history CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Test-split metrics JSON.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, default_value = "model.json")]
    pub model: PathBuf,
    #[arg(long, default_value = "dataset.csv")]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value = "dataset.csv")]
    pub data: PathBuf,
    #[arg(long, default_value = "sweep.csv")]
    pub out: PathBuf,
    /// Cells trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value_t = 100)]
    pub patience: usize,
    #[arg(long, default_value_t = 2000)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TwinArgs {
    #[arg(long, default_value = "model.json")]
    pub model: PathBuf,
    /// Electric demand held during the rollout, kW.
    #[arg(long, default_value_t = 1.889)]
    pub demand: f64,
    #[arg(long, default_value = "twin_report.json")]
    pub report: PathBuf,
    /// Predicted trajectory CSV.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    #[arg(long, default_value_t = 3600)]
    pub max_steps: usize,
    /// Largest per-step change (normalised units) still counted as steady.
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    /// Consecutive quiet steps required for convergence.
    #[arg(long, default_value_t = 30)]
    pub window: usize,
    /// Noise seed of the cold-start history.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also run the plant simulator to steady state and report the heating-power error.
    #[arg(long)]
    pub compare_plant: bool,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").args(["plant", "twin"])))]
pub struct ServeArgs {
    #[arg(long, default_value_t = 4840)]
    pub port: u16,
    #[arg(long, default_value_t = 8080)]
    pub http_port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: std::net::IpAddr,
    /// Publish the simulated plant only (the default).
    #[arg(long)]
    pub plant: bool,
    /// Also publish the twin's `dt_` expectations; needs --model.
    #[arg(long, requires = "model")]
    pub twin: bool,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Disable sensor noise.
    #[arg(long)]
    pub no_noise: bool,
    /// Seconds between twin rollouts.
    #[arg(long, default_value_t = 5.0)]
    pub twin_period: f64,
    /// Chat backend base URL, or `fallback` for the rule-based advisor. Defaults to ASSISTANT_BASE_URL if set.
    #[arg(long)]
    pub backend: Option<String>,
}

#[derive(Debug, Args)]
pub struct AssistArgs {
    /// Chat backend base URL, or `fallback` for the rule-based advisor. Defaults to ASSISTANT_BASE_URL if set.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub query: String,
    /// Model id sent to the backend. Defaults to ASSISTANT_MODEL.
    #[arg(long)]
    pub model_name: Option<String>,
    /// Ask a running server's gateway (e.g. http://127.0.0.1:8080) instead of using a local snapshot.
    #[arg(long, conflicts_with = "frame")]
    pub gateway: Option<String>,
    /// Facility snapshot JSON (a sensor frame); defaults to the idle validation fixture.
    #[arg(long)]
    pub frame: Option<PathBuf>,
    /// Print the whole reply (prompt, advisory, derived metrics) as JSON.
    #[arg(long)]
    pub json: bool,
}
