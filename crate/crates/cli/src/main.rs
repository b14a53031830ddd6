mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// A bad flag, key or value supplied by the caller.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "durflow", version, about = "Duration-controllable flow-matching speech synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// TOML configuration file; `--set` overrides apply on top.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.steps=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for initialization, sampling and data generation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file or directory (meaning depends on the command).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a prepared corpus from a raw manifest, or a synthetic one.
    PrepareData(commands::PrepareArgs),
    /// Train the flow-matching acoustic model.
    TrainAcoustic(commands::TrainArgs),
    /// Train the autoregressive duration model.
    TrainDuration(commands::TrainArgs),
    /// Fine-tune a duration checkpoint on preference pairs.
    Dpo(commands::DpoArgs),
    /// Pair model predictions (loser) with recorded durations (winner).
    GeneratePairs(commands::PairArgs),
    /// Synthesize a mel spectrogram and waveform.
    Synth(commands::SynthArgs),
    /// Held-out duration error as a function of the number of DPO pairs.
    Sweep(commands::SweepArgs),
    /// Run the preference annotation service.
    AnnotateServe(commands::ServeArgs),
    /// Duration metrics of predicted against reference sequences.
    Eval(commands::EvalArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::PrepareData(a) => commands::prepare_data(a),
        Command::TrainAcoustic(a) => commands::train_acoustic(a),
        Command::TrainDuration(a) => commands::train_duration(a),
        Command::Dpo(a) => commands::dpo(a),
        Command::GeneratePairs(a) => commands::generate_pairs(a),
        Command::Synth(a) => commands::synth(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::AnnotateServe(a) => commands::annotate_serve(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e:#}\n\nRun with --help for usage.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
