mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{Outcome, UsageError};

#[derive(Parser, Debug)]
#[command(name = "invariant-forge", version, about = "Find and certify conserved quantities of dynamical systems")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate noisy trajectories and write a dataset.
    Simulate(SimulateArgs),
    /// Fit a neural vector field to a dataset.
    Train(TrainArgs),
    /// Search for candidate invariants of a learned or exact field.
    Discover(DiscoverArgs),
    /// Certify one expression against a field.
    Verify(VerifyArgs),
    /// Run an experiment grid and write its report.
    Experiment(ExperimentArgs),
    /// Rebuild grid.md from a results directory.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub n_traj: Option<usize>,
    #[arg(long)]
    pub n_obs: Option<usize>,
    #[arg(long)]
    pub t_span: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for dataset.json and dataset.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for model.json and train_report.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DiscoverArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dataset whose states define the search region.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Search against the closed-form field of the dataset's system.
    #[arg(long)]
    pub exact_field: bool,
    /// Use finite differences of the raw data instead of a model.
    #[arg(long)]
    pub direct: bool,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Candidates file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Raw,
    Normalized,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Candidate in prefix notation, e.g. "add mul x x mul v v".
    #[arg(long)]
    pub expr: String,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Certify against the closed-form field of `--system`.
    #[arg(long)]
    pub exact_field: bool,
    #[arg(long)]
    pub system: Option<String>,
    /// Certification tolerance; defaults to 1e-3 with --exact-field, else the configured value
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Also measure drift along true trajectories.
    #[arg(long)]
    pub drift: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Results directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Results directory holding grid.csv.
    #[arg(long)]
    pub results: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let cfg = match config::RunConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Discover(a) => commands::discover(cfg, a),
        Command::Verify(a) => commands::verify(cfg, a),
        Command::Experiment(a) => commands::experiment(cfg, a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Failed(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
