use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "muse", version, about = "Multimodal punctuation prediction toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus with n-best hypotheses into a directory
    Synth(Common),
    /// Print the punctuation class distribution of a corpus
    Stats(Common),
    /// Train a model and write a checkpoint
    Train(Common),
    /// Evaluate a checkpoint against reference labels
    Eval(Common),
    /// Evaluate a checkpoint on 1-best hypotheses with restored targets
    EvalAsr(Common),
    /// Add restored n-best hypotheses to a corpus
    Augment(Common),
    /// Punctuate word sequences read from stdin, one utterance per line
    Predict(Common),
    /// Finite-difference check of every differentiable primitive
    Gradcheck(Common),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Flat `section.key = value` config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub nbest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = ["muse", "lex", "blstm", "stream"])]
    pub variant: Option<String>,
    #[arg(long, value_parser = ["fa", "att"])]
    pub fusion: Option<String>,
    #[arg(long, value_parser = ["pitch", "melspec", "wav2vec", "synthetic"])]
    pub features: Option<String>,
    /// Hypotheses per utterance used for augmentation
    #[arg(long = "n-best")]
    pub n_best: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Model checkpoint to evaluate or predict with
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Config override `section.key=value`; repeatable, applied before flags
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}
