mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use op2vec::classifier::{Loss, Optimizer};
use op2vec::corpus::VocabularyMode;
use op2vec::UnknownOpcodePolicy;

/// Opcode embeddings for Android malware detection.
///
/// Stages: extract -> corpus -> train-embeddings -> embed ->
/// train-classifier -> evaluate. Results go to standard output as JSON or
/// CSV; progress and errors go to standard error.
#[derive(Debug, Parser)]
#[command(name = "op2vec", version)]
struct Cli {
    /// Suppress progress lines on standard error.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Disassemble APK or DEX files into opcode sequences (OPSQ) and write a manifest.
    Extract(ExtractArgs),
    /// Build the opcode vocabulary of a corpus and report its statistics.
    Corpus(CorpusArgs),
    /// Train skip-gram opcode embeddings and write the table (O2VT) and a loss trace.
    TrainEmbeddings(TrainEmbeddingsArgs),
    /// Replace every opcode of every program with its vector (OP2V).
    Embed(EmbedArgs),
    /// Train the CNN classifier on an embedded dataset and write a checkpoint (O2VC).
    TrainClassifier(TrainClassifierArgs),
    /// Score a dataset with a trained classifier and print metrics.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// APK or DEX files, or directories containing them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output directory for the .opsq files and manifest.json.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Manifest-style JSON list of {path, label} assigning labels to inputs.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Label for every input not covered by --labels (0 benign, 1 malicious).
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    pub label: Option<u8>,
    /// What to do with undefined opcode bytes: error, skip or map-to-unk.
    #[arg(long)]
    pub unk_policy: Option<UnknownOpcodePolicy>,
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Accept DEX files whose Adler-32 checksum does not match.
    #[arg(long)]
    pub no_verify_checksum: bool,
    /// Also check the SHA-1 signature of every DEX file.
    #[arg(long)]
    pub verify_signature: bool,
    /// Worker threads (default: all cores).
    #[arg(short, long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(short, long)]
    pub manifest: PathBuf,
    /// Vocabulary JSON to write.
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// full-table (all 255 opcode slots) or observed.
    #[arg(long)]
    pub vocab_mode: Option<VocabularyMode>,
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainEmbeddingsArgs {
    #[arg(short, long)]
    pub manifest: PathBuf,
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Embedding table to write; the loss trace goes next to it as <stem>.trace.csv.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Also write the table as text, one `mnemonic v1 .. vD` line per opcode.
    #[arg(long)]
    pub text: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub vocab_mode: Option<VocabularyMode>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
    /// Train N averaged replicas in parallel instead of the deterministic
    /// single-threaded path.
    #[arg(long)]
    pub parallel: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(short, long)]
    pub table: PathBuf,
    #[arg(short, long)]
    pub manifest: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub unk_policy: Option<UnknownOpcodePolicy>,
    #[arg(short, long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainClassifierArgs {
    #[arg(short, long)]
    pub dataset: PathBuf,
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub input_length: Option<usize>,
    /// cross-entropy or mse.
    #[arg(long)]
    pub loss: Option<Loss>,
    /// adam or sgd.
    #[arg(long)]
    pub optimizer: Option<Optimizer>,
    /// Fraction of each class held out for per-epoch metrics.
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(short, long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Decision threshold; defaults to the one stored in the checkpoint.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Score only the records the classifier held out during training.
    #[arg(long)]
    pub holdout: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let progress = commands::Progress::new(!cli.quiet);
    let result = match cli.command {
        Command::Extract(a) => commands::extract(&a, &progress),
        Command::Corpus(a) => commands::corpus(&a),
        Command::TrainEmbeddings(a) => commands::train_embeddings(&a, &progress),
        Command::Embed(a) => commands::embed(&a, &progress),
        Command::TrainClassifier(a) => commands::train_classifier(&a, &progress),
        Command::Evaluate(a) => commands::evaluate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("op2vec: error: {e:#}");
            ExitCode::from(1)
        }
    }
}
