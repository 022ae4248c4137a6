//! `nam`: train, evaluate and adapt neural association models from the
//! command line.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "nam",
    version,
    about = "Neural association models for triples and cause-effect pairs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a planted-rule KB or planted cause-effect data.
    Synth(SynthArgs),
    /// Train a triple model and write a checkpoint.
    Train(TrainArgs),
    /// Classify a labeled test file with a checkpoint.
    Eval(EvalArgs),
    /// Add a new relation to a trained model.
    Transfer(TransferArgs),
    /// Train a cause-effect model on counted pairs.
    WinogradTrain(WinogradTrainArgs),
    /// Answer schema problems with a cause-effect model.
    WinogradResolve(WinogradResolveArgs),
    /// Compare backpropagation with finite differences on random tiny models.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SynthKind {
    Kb,
    Winograd,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "kb")]
    kind: SynthKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    relations: usize,
    #[arg(long, default_value_t = 200)]
    entities: usize,
    #[arg(long, default_value_t = 3)]
    clusters: usize,
    #[arg(long, default_value_t = 0.6)]
    rule_density: f64,
    /// Training positives (kb) or pair occurrences (winograd).
    #[arg(long)]
    positives: Option<usize>,
    #[arg(long, default_value_t = 400)]
    dev_positives: usize,
    #[arg(long, default_value_t = 400)]
    test_positives: usize,
    #[arg(long, default_value_t = 40)]
    verbs: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 20)]
    problems: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// `key = value` settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Word vectors for composing entity embeddings.
    #[arg(long)]
    words: Option<PathBuf>,
    /// Per-epoch CSV; stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    entity_dim: Option<usize>,
    #[arg(long)]
    relation_dim: Option<usize>,
    #[arg(long)]
    hidden_layers: Option<usize>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    embedding_learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    per_relation_threshold: Option<bool>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Retune thresholds on this labeled file.
    #[arg(long, conflicts_with = "threshold")]
    dev: Option<PathBuf>,
    /// Fixed global threshold.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Per-relation accuracy CSV.
    #[arg(long)]
    relations_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransferMode {
    /// Learn only the new relation code; everything else stays frozen.
    Code,
    /// Update every parameter.
    Full,
}

#[derive(Debug, Args)]
struct TransferArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    /// Name of the new relation.
    #[arg(long)]
    relation: String,
    /// Adaptation triples of the new relation.
    #[arg(long)]
    samples: PathBuf,
    /// Labeled test triples of the new relation.
    #[arg(long)]
    test: PathBuf,
    /// Labeled test triples of the original relations.
    #[arg(long)]
    orig_test: PathBuf,
    #[arg(long, value_enum, default_value = "code")]
    mode: TransferMode,
    /// Comma-separated sample fractions for the code-only learning curve.
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    /// Extended checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    embedding_learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct WinogradTrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Counted cause-effect pairs.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `transmat` or `relationvec`.
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long)]
    words: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    embedding_learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct WinogradResolveArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    schemas: PathBuf,
    /// Per-problem CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Transfer(a) => commands::transfer(a),
        Command::WinogradTrain(a) => commands::winograd_train(a),
        Command::WinogradResolve(a) => commands::winograd_resolve(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
