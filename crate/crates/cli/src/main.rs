//! Command-line pipeline driver: data generation, the three pretraining
//! procedures, transfer fine-tuning, evaluation, and ensembling.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "emocloze",
    version,
    about = "Transfer learning for cloze-style emotion classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cloze dataset plus pretraining corpora.
    GenData(GenDataArgs),
    /// Train skip-gram word embeddings on an unlabeled corpus.
    PretrainEmb(PretrainEmbArgs),
    /// Train (or continue training) a next-token language model.
    PretrainLm(PretrainLmArgs),
    /// Train a sentiment classifier on labeled text.
    PretrainSent(PretrainSentArgs),
    /// Fine-tune a classifier on the cloze task, optionally from a
    /// pretrained checkpoint.
    Finetune(FinetuneArgs),
    /// Evaluate a classifier checkpoint and write a prediction file.
    Evaluate(EvaluateArgs),
    /// Combine prediction files by unweighted average or majority vote.
    Ensemble(EnsembleArgs),
    /// Check every layer's gradients against the finite-difference oracle.
    Gradcheck(GradcheckArgs),
}

/// Architecture flags shared by the classifier-producing commands.
#[derive(Args, Clone)]
pub struct ModelArgs {
    #[arg(long, help = "Word-vector width")]
    embedding_dim: Option<usize>,
    #[arg(long, help = "Hidden width of each LSTM")]
    lstm_size: Option<usize>,
    #[arg(long, help = "Stacked LSTM layers (1 or 2)")]
    lstm_layers: Option<usize>,
    #[arg(long, help = "Read the sequence in both directions")]
    bidirectional: bool,
    #[arg(long, help = "Std of additive Gaussian noise on embeddings")]
    embedding_noise: Option<f64>,
    #[arg(long, help = "Dropout rate after the embedding lookup")]
    embedding_dropout: Option<f64>,
    #[arg(long, help = "Dropout rate between stacked LSTM layers")]
    lstm_dropout: Option<f64>,
}

/// Optimization flags shared by the training commands.
#[derive(Args, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, help = "Early-stop patience on dev macro-F1")]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, help = "Optional key=value settings file; flags override it")]
    config: Option<PathBuf>,
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long, default_value = "data")]
    out_dir: PathBuf,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    dev_per_class: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long, help = "Corpus flavor: emo, mixed, or generic")]
    corpus_kind: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, help = "Optional key=value settings file; flags override it")]
    config: Option<PathBuf>,
}

#[derive(Args)]
pub struct PretrainEmbArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, help = "Also export `token v1 v2 ...` plain text")]
    text_out: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    min_count: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, help = "Optional key=value settings file; flags override it")]
    config: Option<PathBuf>,
}

#[derive(Args)]
pub struct PretrainLmArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, help = "Continue training this checkpoint instead of starting fresh")]
    init_from: Option<PathBuf>,
    #[arg(long, help = "Fine-tune mode when continuing: simple or sgu")]
    ft_mode: Option<String>,
    #[arg(long, help = "Epoch that unfreezes the LSTM groups (sgu)")]
    sgu_n: Option<usize>,
    #[arg(long, help = "Epoch that unfreezes the embedding (sgu)")]
    sgu_k: Option<usize>,
    #[arg(long, help = "Keep only the most frequent tokens")]
    vocab_max: Option<usize>,
    #[arg(long)]
    min_count: Option<u64>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    training: TrainArgs,
}

#[derive(Args)]
pub struct PretrainSentArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, help = "Initialize the embedding layer from this checkpoint")]
    embeddings: Option<PathBuf>,
    #[arg(long, help = "Pin the embedding layer during training")]
    freeze_embedding: Option<bool>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    training: TrainArgs,
}

#[derive(Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, help = "Pretrained checkpoint to transfer from")]
    source: Option<PathBuf>,
    #[arg(
        long,
        help = "Transfer scheme: random, p-emb, p-sent, or p-lm (default: inferred from the source kind)"
    )]
    scheme: Option<String>,
    #[arg(long, help = "Fine-tune mode: simple or sgu")]
    ft_mode: Option<String>,
    #[arg(long, help = "Epoch that unfreezes the LSTM groups (sgu)")]
    sgu_n: Option<usize>,
    #[arg(long, help = "Epoch that unfreezes the embedding (sgu)")]
    sgu_k: Option<usize>,
    #[arg(long, help = "Concatenate the hidden state before the placeholder")]
    concat: bool,
    #[arg(long, help = "Override the scheme's embedding-freeze default")]
    freeze_embedding: Option<bool>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    training: TrainArgs,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, help = "Prediction TSV with per-class posteriors")]
    predictions_out: PathBuf,
}

#[derive(Args)]
pub struct EnsembleArgs {
    #[arg(long, help = "Combination rule: ua or mv")]
    method: String,
    #[arg(long, help = "Combined prediction file")]
    out: PathBuf,
    #[arg(required = true, help = "Prediction files aligned by example id")]
    predictions: Vec<PathBuf>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            // --help/--version are not failures
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data(args),
        Command::PretrainEmb(args) => commands::pretrain_emb(args),
        Command::PretrainLm(args) => commands::pretrain_lm(args),
        Command::PretrainSent(args) => commands::pretrain_sent(args),
        Command::Finetune(args) => commands::finetune(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Ensemble(args) => commands::ensemble(args),
        Command::Gradcheck(args) => commands::gradcheck(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
