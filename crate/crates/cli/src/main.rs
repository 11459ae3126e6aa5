mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use arcpool_core::Strategy;

#[derive(Debug, Parser)]
#[command(
    name = "arcpool",
    version,
    about = "Margin-based active learning on a hypersphere"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-blob dataset.
    GenSynth(GenSynthArgs),
    /// Fit one model on a train split and report test accuracy.
    Train(TrainArgs),
    /// Run simulated active learning and write learning-curve CSVs.
    Experiment(ExperimentArgs),
    /// Dump acquisition scores of a checkpoint over a dataset.
    Score(ScoreArgs),
    /// Start the annotation service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    /// SynthConfig JSON file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in generator preset: overlap-blobs or separable-blobs.
    #[arg(long)]
    preset: Option<String>,
    /// Output file; `.csv` writes CSV, anything else JSONL.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// HyperParams JSON file; `d_in` may be omitted.
    #[arg(long)]
    hp: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Seed for initialisation and shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    data: PathBuf,
    /// ALConfig JSON file or preset name (agnews-like, imdb-like, telecom-like).
    #[arg(long)]
    al: String,
    /// Overrides the strategy in the config.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Comma-separated seeds or a range `a..b`; overrides the config.
    #[arg(long)]
    seeds: Option<String>,
    /// Directory for curves.csv and aggregate.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    strategy: Strategy,
    #[arg(long)]
    out: PathBuf,
    /// File of labeled ids (whitespace or comma separated); every other
    /// sample is scored. Required for coreset.
    #[arg(long)]
    labeled: Option<PathBuf>,
    /// Seed for the random strategy.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Default dataset for sessions that do not name one.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Default ALConfig JSON file or preset name.
    #[arg(long)]
    al: Option<String>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: String,
    #[arg(long, default_value = "arcpool-state")]
    state_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            eprintln!(
                "arcpool: error: {}",
                first.trim_start_matches("error: ").trim()
            );
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::GenSynth(a) => {
            commands::gen_synth(a.config.as_deref(), a.preset.as_deref(), &a.out)
        }
        Command::Train(a) => commands::train(&commands::TrainOpts {
            data: a.data,
            hp: a.hp,
            out: a.out,
            test_fraction: a.test_fraction,
            split_seed: a.split_seed,
            seed: a.seed,
        }),
        Command::Experiment(a) => {
            commands::experiment(&a.data, &a.al, a.strategy, a.seeds.as_deref(), &a.out)
        }
        Command::Score(a) => commands::score(&commands::ScoreOpts {
            ckpt: a.ckpt,
            data: a.data,
            strategy: a.strategy,
            out: a.out,
            labeled: a.labeled,
            seed: a.seed,
        }),
        Command::Serve(a) => commands::serve(a.data, a.al.as_deref(), &a.listen, a.state_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("arcpool: error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code())
        }
    }
}
