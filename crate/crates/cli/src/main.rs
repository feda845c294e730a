mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// ESGCN traffic flow forecaster.
#[derive(Parser, Debug)]
#[command(name = "esgcn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write the best checkpoint, train_log.csv and metrics.json.
    Train(TrainArgs),
    /// Score a checkpoint on the test split of a dataset.
    Eval(EvalArgs),
    /// Forecast one window: horizon rows × node columns, denormalized.
    Predict(WindowArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Export the adaptive adjacency matrix (row = target node) for one window.
    ExportAam(ExportArgs),
    /// Train and test a preset of model variants.
    Ablate(AblateArgs),
    /// Show or check run configuration.
    Config(ConfigArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Run configuration (JSON); defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset path, overriding `data.path`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Seed, overriding `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Epochs, overriding `train.epochs`.
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Train this many times with consecutive seeds and summarize.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    repeat: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset path; defaults to the one the checkpoint was trained on.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory for metrics.json; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WindowArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Window start, indexing every window of the full series.
    #[arg(long, default_value_t = 0)]
    window: usize,
    /// Directory for the CSV; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[command(flatten)]
    window: WindowArgs,
    /// Export the reversed matrix A_r instead of A.
    #[arg(long)]
    reversed: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model size preset for the whole-model checks.
    #[arg(long, default_value = "toy", value_parser = ["toy"])]
    size: String,
    /// Random draws per op.
    #[arg(long, default_value_t = 10)]
    points: usize,
    /// Random draws per whole-model variant.
    #[arg(long, default_value_t = 2)]
    model_points: usize,
    /// Only run cases whose name contains this text.
    #[arg(long)]
    filter: Option<String>,
    /// Directory for a JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Adds a case with a deliberately wrong backward rule.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// table3, components, lambda, attention or representative.
    #[arg(long, default_value = "table3")]
    preset: String,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Print the default configuration.
    #[arg(long)]
    dump_defaults: bool,
    /// Validate this configuration and print it with defaults filled in.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::ExportAam(a) => commands::export_aam(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Config(a) => commands::config(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
