//! `hiersumm`: the summarisation pipeline as a set of file-to-file commands.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "hiersumm", version, about = "Rank paragraphs, build graphs, train and run a hierarchical summariser")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a byte-pair vocabulary on instance files.
    Tokenize {
        /// Instance JSONL files; every title, paragraph and target is used.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        vocab_size: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write each input, minus paragraphs that clone the target,
        /// under this directory with the same file name.
        #[arg(long)]
        filtered_dir: Option<PathBuf>,
    },
    /// Train the paragraph ranker against ROUGE-2 recall labels.
    RankTrain {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// `key = value` settings; the `ranker_*` keys and `seed` apply.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score paragraphs and store the top-L' selection in each instance.
    Rank {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        ranker: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 24)]
        lprime: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the paragraph graph of each instance's selection.
    Graph {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, value_enum)]
        kind: GraphArg,
        #[arg(long, default_value_t = 24)]
        lprime: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the summariser; writes config.txt, the best checkpoints,
    /// final.bin and report.json into `out`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        train: PathBuf,
        /// Held-out instances for validation and checkpoint selection.
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarise instances with the trained model or a baseline.
    Generate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = System::Ht)]
        system: System,
        /// Directory written by `train` (ht only).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Checkpoint to load; defaults to `<model>/final.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long, value_enum)]
        graph: Option<GraphArg>,
        /// Paragraphs fed to the model, overriding the trained setting.
        #[arg(long)]
        lprime: Option<usize>,
        #[arg(long)]
        total_tokens: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// ROUGE-1/2/L of candidate summaries against references, as JSON.
    Evaluate {
        /// JSONL with a `summary` (or `target`) field per line.
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every trainable path.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GraphArg {
    None,
    Similarity,
    Discourse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum System {
    Ht,
    Lead,
    Lexrank,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind, e.message.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
