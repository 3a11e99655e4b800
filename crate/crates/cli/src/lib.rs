//! Command-line front end: train, kfold, predict, evaluate, tokenize,
//! gradcheck, stats. Exit codes: 0 success, 2 config error, 3 numeric
//! failure, 4 partial results, 5 missing artifact.

pub mod commands;
pub mod config;

use clap::{Parser, Subcommand};
use ironbench_core::corpus::{DataFormat, Language};
use ironbench_core::task::TaskKind;
use std::path::PathBuf;

/// An error carrying its process exit code.
#[derive(Debug)]
pub struct CmdError {
    pub code: i32,
    pub message: String,
}

impl CmdError {
    pub fn config(message: String) -> Self {
        CmdError { code: 2, message }
    }

    pub fn numerics(message: String) -> Self {
        CmdError { code: 3, message }
    }

    pub fn partial(message: String) -> Self {
        CmdError { code: 4, message }
    }

    pub fn missing(message: String) -> Self {
        CmdError { code: 5, message }
    }
}

impl From<ironbench_core::Error> for CmdError {
    fn from(e: ironbench_core::Error) -> Self {
        let code = match &e {
            ironbench_core::Error::Numerics { .. } => 3,
            ironbench_core::Error::MissingArtifact(_) => 5,
            _ => 2,
        };
        CmdError {
            code,
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Parser)]
#[command(
    name = "ironbench",
    about = "Desk-scale sarcasm-detection pipeline: byte-level transformers, \
             k-fold ensembling, and iSarcasmEval-style task metrics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single train/eval run from a JSON config (fold 0 held out).
    Train {
        /// Path to the run config JSON.
        config: PathBuf,
        /// Comma-separated language selection, e.g. "en" or "en,ar".
        #[arg(long)]
        languages: Option<String>,
    },
    /// k-fold × grid cross-validation into a run registry.
    Kfold {
        config: PathBuf,
        #[arg(long)]
        languages: Option<String>,
        /// Number of runs to train in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Predict a test file with the members of a finished run directory.
    Predict {
        /// Run directory produced by `train` or `kfold`.
        run_dir: PathBuf,
        /// Test data file (format follows the run's config).
        test: PathBuf,
        /// "ensemble" averages all members; "single" uses the best one.
        #[arg(long, default_value = "ensemble")]
        mode: String,
        /// Write predictions here instead of into the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a predictions/submission file against a gold file.
    Evaluate {
        predictions: PathBuf,
        gold: PathBuf,
        /// Task override; inferred from the files when omitted.
        #[arg(long)]
        task: Option<String>,
        /// Gold file format.
        #[arg(long, default_value = "jsonl")]
        format: String,
        /// Language tag for gold rows that do not carry one.
        #[arg(long, default_value = "en")]
        language: String,
    },
    /// Print byte-level token ids, one line per input line.
    Tokenize {
        /// Input text file; stdin when omitted.
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        max_seq_len: usize,
    },
    /// Verify analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 16)]
        d_model: usize,
        #[arg(long, default_value_t = 2)]
        n_layers: usize,
        #[arg(long, default_value_t = 4)]
        n_heads: usize,
        #[arg(long, default_value_t = 32)]
        d_ff: usize,
        #[arg(long, default_value_t = 8)]
        seq_len: usize,
        #[arg(long, default_value_t = 0.1)]
        dropout: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Dataset ingestion counts as JSON.
    Stats {
        path: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: String,
        #[arg(long, default_value = "en")]
        language: String,
    },
}

fn dispatch(args: Vec<String>) -> Result<(), CmdError> {
    let (rest, overrides) = config::split_overrides(args)?;
    let cli = Cli::try_parse_from(rest).map_err(|e| {
        // clap already formats usage errors; help/version requests exit 0.
        if e.use_stderr() {
            CmdError::config(e.to_string())
        } else {
            print!("{e}");
            CmdError {
                code: 0,
                message: String::new(),
            }
        }
    })?;
    match cli.command {
        Command::Train { config, languages } => {
            commands::cmd_train(&config, &overrides, languages.as_deref())
        }
        Command::Kfold {
            config,
            languages,
            jobs,
        } => commands::cmd_kfold(&config, &overrides, languages.as_deref(), jobs),
        Command::Predict {
            run_dir,
            test,
            mode,
            out,
        } => commands::cmd_predict(&run_dir, &test, &mode, out.as_deref()),
        Command::Evaluate {
            predictions,
            gold,
            task,
            format,
            language,
        } => {
            let task = task.map(|t| t.parse::<TaskKind>()).transpose()?;
            let format: DataFormat = format.parse()?;
            let language: Language = language.parse()?;
            commands::cmd_evaluate(&predictions, &gold, task, format, language)
        }
        Command::Tokenize { input, max_seq_len } => {
            commands::cmd_tokenize(input.as_deref(), max_seq_len)
        }
        Command::Gradcheck {
            d_model,
            n_layers,
            n_heads,
            d_ff,
            seq_len,
            dropout,
            seed,
            h,
            tolerance,
        } => commands::cmd_gradcheck(
            d_model, n_layers, n_heads, d_ff, seq_len, dropout, seed, h, tolerance,
        ),
        Command::Stats {
            path,
            format,
            language,
        } => {
            let format: DataFormat = format.parse()?;
            let language: Language = language.parse()?;
            commands::cmd_stats(&path, format, language)
        }
    }
}

/// Run the CLI against an explicit argument vector (argv[0] included) and
/// return the process exit code.
pub fn run_args(args: Vec<String>) -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    match dispatch(args) {
        Ok(()) => 0,
        Err(e) => {
            if !e.message.is_empty() {
                eprintln!("ironbench: {e}");
            }
            e.code
        }
    }
}

/// Entry point for the binary.
pub fn run() -> i32 {
    run_args(std::env::args().collect())
}
