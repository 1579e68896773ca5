//! `pricewar`: simulate markets, infer opponent strategies, preprocess
//! coupon logs, run tournaments and score estimates.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::LazyLock;

use clap::{Args, Parser, Subcommand};
use pricewar::ErrorKind;

use commands::{
    defaults_toml, EvaluateArgs, InferConfig, PreprocessArgs, SimulateConfig, TournamentConfig,
};

static SIMULATE_DEFAULTS: LazyLock<String> = LazyLock::new(defaults_toml::<SimulateConfig>);
static INFER_DEFAULTS: LazyLock<String> = LazyLock::new(defaults_toml::<InferConfig>);
static PREPROCESS_DEFAULTS: LazyLock<String> =
    LazyLock::new(defaults_toml::<pricewar::pipeline::PreprocessConfig>);
static TOURNAMENT_DEFAULTS: LazyLock<String> = LazyLock::new(defaults_toml::<TournamentConfig>);

#[derive(Parser)]
#[command(name = "pricewar", version, about = "Price-war market laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct Common {
    /// Seed overriding the config file's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Play one game and write both companies' logs and the share trajectory.
    #[command(after_help = format!("Config file defaults:\n\n{}", *SIMULATE_DEFAULTS))]
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fit preference and strategy distributions to one record file.
    #[command(after_help = format!("Config file defaults:\n\n{}", *INFER_DEFAULTS))]
    Infer {
        #[arg(long)]
        records: PathBuf,
        /// Optional; built-in defaults are used without it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `assignments.csv` from `preprocess`; pools customers into their
        /// strategy groups.
        #[arg(long)]
        assignments: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Cluster a raw offline coupon log and emit per-group record files.
    #[command(after_help = format!("Config file defaults:\n\n{}", *PREPROCESS_DEFAULTS))]
    Preprocess {
        #[command(flatten)]
        args: PreprocessArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Play every configured policy pairing over every seed.
    #[command(after_help = format!("Config file defaults:\n\n{}", *TOURNAMENT_DEFAULTS))]
    Tournament {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score estimates on held-out records and against true strategies.
    Evaluate {
        #[command(flatten)]
        args: EvaluateArgs,
        #[command(flatten)]
        common: Common,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Runtime => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Simulate { common, .. }
        | Command::Infer { common, .. }
        | Command::Preprocess { common, .. }
        | Command::Tournament { common, .. }
        | Command::Evaluate { common, .. } => *common,
    };
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(4);
        }
    }
    let result = match cli.command {
        Command::Simulate { config, out, .. } => commands::simulate(&config, &out, common.seed),
        Command::Infer {
            records,
            config,
            assignments,
            out,
            ..
        } => commands::infer(&records, config.as_deref(), assignments.as_deref(), &out, common.seed),
        Command::Preprocess { args, .. } => commands::preprocess(&args, common.seed),
        Command::Tournament { config, out, .. } => commands::tournament(&config, &out, common.seed),
        Command::Evaluate { args, .. } => commands::evaluate(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
