mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "tiretwin", version, about = "Tire casing digital twin pipeline")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic fleet (or drum tests) as JSON Lines.
    Generate(GenerateArgs),
    /// Change-point reduction of every series in a dataset.
    Reduce(ReduceArgs),
    /// Train a base forecaster.
    Train(TrainArgs),
    /// One multi-horizon forecast at a given mileage.
    Predict(PredictArgs),
    /// Train a discrepancy model on new observations.
    Update(UpdateArgs),
    /// Search the removal threshold that minimizes removal-mileage MAPE.
    OptimizeThreshold(OptimizeArgs),
    /// Removal decisions at one or more mileposts.
    Decide(DecideArgs),
    /// Comparison table against persistence and optionally an LSTM.
    Eval(EvalArgs),
    /// Render a figure from a JSON data file.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Emit constant-condition drum series at this casing temperature.
    #[arg(long)]
    pub drum_ct: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub radius: Option<usize>,
    #[arg(long, conflicts_with = "target_count")]
    pub theta: Option<f64>,
    #[arg(long)]
    pub target_count: Option<usize>,
    /// Per-series kept counts and thresholds as CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub dropout_rate: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub quantiles: Option<Vec<f64>>,
    #[arg(long)]
    pub l_hist: Option<usize>,
    #[arg(long)]
    pub l_fut: Option<usize>,
    #[arg(long)]
    pub n_past_features: Option<usize>,
    #[arg(long)]
    pub n_future_features: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub lr_final_fraction: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub mape_eps: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub dtft: Option<PathBuf>,
    #[arg(long)]
    pub series: PathBuf,
    /// Only this tire; every tire in the file otherwise.
    #[arg(long)]
    pub tire: Option<String>,
    #[arg(long)]
    pub at_mileage: f64,
    /// Monte Carlo dropout passes; below 2 gives the eval-mode forecast.
    #[arg(long, default_value_t = 0)]
    pub mc_samples: usize,
    /// JSON output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct UpdateArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub new_data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dtft: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub at_mileage: f64,
    /// `lo:hi:n`, log-spaced.
    #[arg(long, default_value = "0.01:0.5:50")]
    pub grid: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecideArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dtft: Option<PathBuf>,
    #[arg(long)]
    pub series: PathBuf,
    #[arg(long)]
    pub tire: Option<String>,
    #[arg(long, required = true)]
    pub at_mileage: Vec<f64>,
    /// Removal threshold; the config's, or 0.0909, when omitted.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Held-out series.
    #[arg(long)]
    pub data: PathBuf,
    /// Also train and score an LSTM baseline on `--train-data`.
    #[arg(long, requires = "train_data")]
    pub with_lstm: bool,
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub data: PathBuf,
    /// Output stem; `.svg` and `.csv` are appended.
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => commands::generate(&cfg, a),
        Command::Reduce(a) => commands::reduce(&cfg, a),
        Command::Train(a) => commands::train(&cfg, a),
        Command::Predict(a) => commands::predict(&cfg, a),
        Command::Update(a) => commands::update(&cfg, a),
        Command::OptimizeThreshold(a) => commands::optimize_threshold(&cfg, a),
        Command::Decide(a) => commands::decide(&cfg, a),
        Command::Eval(a) => commands::eval(&cfg, a),
        Command::Plot(a) => commands::plot(&cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::config(first).to_line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.class.exit_code() as u8)
        }
    }
}
