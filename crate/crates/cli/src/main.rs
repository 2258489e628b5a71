mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing::Level;

#[derive(Parser)]
#[command(name = "okd-forge", version, about = "Synthetic domain-shift data, distillation runs and reports")]
struct Cli {
    /// Log epoch progress and pipeline decisions to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic domain-shift dataset directory.
    Synth(SynthArgs),
    /// Discover domains in feature embeddings and write a split CSV.
    Dosco(DoscoArgs),
    /// Train a teacher or a student for one or more seeds.
    Train(TrainArgs),
    /// Report a checkpoint's accuracy on every role of a dataset split.
    Eval(EvalArgs),
    /// Aggregate run records into mean ± std tables.
    Compare(CompareArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// JSON config; its `synth` section sets the generator.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `synth.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct DoscoArgs {
    /// Feature manifest: {ids, class_labels, feature_file}.
    #[arg(long)]
    pub features: PathBuf,
    /// JSON config; its `dosco` section supplies defaults for the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Domains per class.
    #[arg(long)]
    pub k: Option<usize>,
    /// Split seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Subsample the train and val roles to 1600 and 400 examples.
    #[arg(long)]
    pub two_k: bool,
    /// L2-normalize every embedding before clustering.
    #[arg(long)]
    pub l2_normalize: bool,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// JSON config; its `train` section is the run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory with a split CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// erm, kd, kd_aug, okd, or teacher.
    #[arg(long)]
    pub method: Option<String>,
    /// Single seed; overrides `train.seed`.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Inclusive seed range `a..b` or a comma list.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Augmentor kind for kd_aug and okd.
    #[arg(long)]
    pub aug: Option<String>,
    /// Jigsaw patch count.
    #[arg(long)]
    pub k: Option<usize>,
    /// Record name; defaults to the method and augmentor.
    #[arg(long)]
    pub name: Option<String>,
    /// Teacher checkpoint directory; replaces the config's teacher source.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Runs root; records go to `<out>/<name>/<seed>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Split CSV; defaults to the dataset's own split.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Glob over run record files, e.g. `runs/*/*.json`.
    #[arg(long)]
    pub runs: String,
    /// Write the CSV report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_max_level(if cli.verbose { Level::INFO } else { Level::WARN })
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Dosco(a) => commands::dosco(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Compare(a) => commands::compare(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
