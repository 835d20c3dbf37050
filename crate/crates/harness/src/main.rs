use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ec2st_harness::report::write_reports;
use ec2st_harness::{run_experiment, ExperimentConfig, ExperimentKind, HarnessError};

#[derive(Parser)]
#[command(name = "ec2st-harness", version, about = "Monte-Carlo experiments for sequential classifier two-sample tests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rejection rate under identical class distributions.
    Type1(Common),
    /// Rejection rate under different class distributions.
    Power(Common),
    /// Samples consumed until rejection for several batch sizes.
    StoppingTime(Common),
    /// Fixed mixture weights against the adaptive one.
    LambdaAblation(Common),
    /// Sensitivity of the rejection curve to the batch order.
    BatchOrder(Common),
    /// Type-I error of naively repeated fixed-sample tests.
    InflationDemo(Common),
    /// Per-sample growth of the log e-value on a discrete toy problem.
    GrowthRate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

fn fail(code: &str, message: &str) -> ExitCode {
    let err = serde_json::json!({ "error": code, "message": message });
    eprintln!("{err}");
    ExitCode::from(2)
}

fn run(kind: ExperimentKind, args: Common) -> Result<(), HarnessError> {
    let (mut config, base) = match &args.config {
        Some(path) => (
            ExperimentConfig::load(path)?,
            path.parent().map(PathBuf::from).unwrap_or_default(),
        ),
        None => (ExperimentConfig::default(), PathBuf::from(".")),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let output = run_experiment(kind, &config, args.jobs, &base)?;
    write_reports(&output, &config, &args.out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim()),
    };
    let (kind, args) = match cli.command {
        Command::Type1(a) => (ExperimentKind::Type1, a),
        Command::Power(a) => (ExperimentKind::Power, a),
        Command::StoppingTime(a) => (ExperimentKind::StoppingTime, a),
        Command::LambdaAblation(a) => (ExperimentKind::LambdaAblation, a),
        Command::BatchOrder(a) => (ExperimentKind::BatchOrder, a),
        Command::InflationDemo(a) => (ExperimentKind::InflationDemo, a),
        Command::GrowthRate(a) => (ExperimentKind::GrowthRate, a),
    };
    match run(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.code(), &e.to_string()),
    }
}
