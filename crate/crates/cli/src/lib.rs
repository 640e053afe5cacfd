//! Command-line front end: argument surface, error-to-exit-code mapping,
//! and the on-disk layout shared by every subcommand.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use lurepot_core::engine::SelectionPolicy;

pub mod commands;
pub mod config;
pub mod server;

/// Exit codes: 0 success, 1 usage, 2 data, 3 internal.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

/// Tag an input-side failure (missing or malformed files, bad datasets).
pub fn data(e: impl fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

/// Tag an output-side or runtime failure.
pub fn internal(e: impl fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "lurepot",
    version,
    about = "Adaptive IoT honeypot: ingest corpora, train models, serve, simulate, report"
)]
pub struct Cli {
    /// TOML config file with [rl], [scorer], [farm], and [server] sections
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Seed for all randomness
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Directory holding the store, logs, snapshots, and reports
    #[arg(long, global = true, default_value = ".", value_name = "DIR")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a seed corpus (JSONL of request/response pairs) into the store
    Ingest {
        /// Seed corpus file; one JSON object per line
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
    },
    /// Train the retrieval scorer from the store and write its snapshot
    TrainScorer,
    /// Train the traffic evaluator from a labeled connection-record CSV
    TrainEvaluator {
        /// Labeled dataset; 41 comma-separated fields plus a label per line
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
    },
    /// Serve the honeypot over TCP until SIGINT/SIGTERM
    Serve {
        /// Listen address, overriding the config (port 0 picks a free port)
        #[arg(long, value_name = "ADDR")]
        bind: Option<String>,
        /// Response selection policy
        #[arg(long, value_enum, default_value_t = PolicyArg::Adaptive)]
        policy: PolicyArg,
    },
    /// Run a simulated attacker campaign against an in-process honeypot
    Simulate {
        /// Response selection policy
        #[arg(long, value_enum, default_value_t = PolicyArg::Adaptive)]
        policy: PolicyArg,
        /// Number of attacker sessions
        #[arg(long, default_value_t = 2000)]
        sessions: u64,
    },
    /// Aggregate a session log (and optional ground truth) into CSV reports
    Report {
        /// Session log; defaults to sessions.jsonl in --out-dir
        #[arg(long, value_name = "FILE")]
        sessions: Option<PathBuf>,
        /// Attacker ground-truth CSV for capture-rate and category columns
        #[arg(long, value_name = "FILE")]
        ground_truth: Option<PathBuf>,
    },
    /// Write the built-in seed corpus, labeled dataset, and signature list
    Assets {
        /// Rows in the generated labeled dataset
        #[arg(long, default_value_t = 15000)]
        rows: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    /// Learned ε-greedy selection
    Adaptive,
    /// Uniform selection baseline, no learning
    Random,
}

impl From<PolicyArg> for SelectionPolicy {
    fn from(arg: PolicyArg) -> SelectionPolicy {
        match arg {
            PolicyArg::Adaptive => SelectionPolicy::Adaptive,
            PolicyArg::Random => SelectionPolicy::RandomSelect,
        }
    }
}

/// Well-known file names inside `--out-dir`.
pub struct Paths {
    pub out_dir: PathBuf,
}

impl Paths {
    pub fn new(out_dir: &Path) -> Paths {
        Paths {
            out_dir: out_dir.to_path_buf(),
        }
    }

    pub fn store(&self) -> PathBuf {
        self.out_dir.join("store.jsonl")
    }

    pub fn sessions(&self) -> PathBuf {
        self.out_dir.join("sessions.jsonl")
    }

    pub fn scorer(&self) -> PathBuf {
        self.out_dir.join("scorer.json")
    }

    pub fn evaluator(&self) -> PathBuf {
        self.out_dir.join("evaluator.json")
    }

    pub fn qtable(&self) -> PathBuf {
        self.out_dir.join("qtable.json")
    }

    pub fn signatures(&self) -> PathBuf {
        self.out_dir.join("signatures.txt")
    }

    pub fn ground_truth(&self) -> PathBuf {
        self.out_dir.join("ground_truth.csv")
    }

    pub fn seeds(&self) -> PathBuf {
        self.out_dir.join("seeds.jsonl")
    }

    pub fn dataset(&self) -> PathBuf {
        self.out_dir.join("nslkdd.csv")
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = config::load(cli.config.as_deref())?;
    std::fs::create_dir_all(&cli.out_dir)
        .map_err(|e| internal(format!("cannot create {}: {e}", cli.out_dir.display())))?;
    let paths = Paths::new(&cli.out_dir);
    match cli.command {
        Command::Ingest { input } => commands::ingest(&paths, &input),
        Command::TrainScorer => commands::train_scorer(&paths, &config),
        Command::TrainEvaluator { dataset } => {
            commands::train_evaluator(&paths, &dataset, cli.seed)
        }
        Command::Serve { bind, policy } => {
            commands::serve(&paths, &config, bind.as_deref(), policy.into(), cli.seed)
        }
        Command::Simulate { policy, sessions } => {
            commands::simulate(&paths, &config, policy.into(), sessions, cli.seed)
        }
        Command::Report {
            sessions,
            ground_truth,
        } => commands::report(&paths, sessions.as_deref(), ground_truth.as_deref()),
        Command::Assets { rows } => commands::assets(&paths, rows, cli.seed),
    }
}
