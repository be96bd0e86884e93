//! `spfno`: dataset generation, training, evaluation, gradient checking and
//! transform benchmarking for spectral neural operators.

mod commands;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use spfno_core::transforms::BasisKind;

use error::Result;
use run::Run;

#[derive(Parser)]
#[command(name = "spfno", version, about)]
struct Cli {
    /// Seed for data generation, initialization and shuffling; overrides any seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Basis {
    Cosine,
    Sine,
    Waws,
}

impl From<Basis> for BasisKind {
    fn from(b: Basis) -> Self {
        match b {
            Basis::Cosine => BasisKind::Cosine,
            Basis::Sine => BasisKind::Sine,
            Basis::Waws => BasisKind::Waws,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test datasets from a task config.
    GenData { config: PathBuf },
    /// Train a model on a generated dataset directory.
    Train {
        config: PathBuf,
        data_dir: PathBuf,
        /// Continue from this checkpoint; the epoch counter carries over.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset file or directory.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// Evaluate on the grid with this many points per dimension.
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        no_projection_filter: bool,
    },
    /// Compare reverse-mode gradients with central differences.
    GradCheck {
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Time forward transforms across grid sizes.
    BenchTransform {
        #[arg(long, value_enum, value_delimiter = ',', default_value = "cosine")]
        basis: Vec<Basis>,
        /// Comma-separated sizes; `a..b` doubles from a up to b, `2^k` is accepted.
        #[arg(long, default_value = "2^10..2^18")]
        sizes: String,
        #[arg(long, default_value_t = 11)]
        reps: usize,
    },
}

fn dispatch(cli: Cli) -> Result<()> {
    let name = match &cli.command {
        Command::GenData { .. } => "gen-data",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::GradCheck { .. } => "grad-check",
        Command::BenchTransform { .. } => "bench-transform",
    };
    let run = Run::new(name, cli.seed, cli.out, cli.force);
    match cli.command {
        Command::GenData { config } => commands::gen_data::run(&run, &config),
        Command::Train {
            config,
            data_dir,
            resume,
        } => commands::train::run(&run, &config, &data_dir, resume.as_deref()),
        Command::Eval {
            checkpoint,
            dataset,
            resolution,
            no_projection_filter,
        } => commands::eval::run(&run, &checkpoint, &dataset, resolution, no_projection_filter),
        Command::GradCheck {
            config,
            eps,
            inject_fault,
        } => commands::grad_check::run(&run, config.as_deref(), eps, inject_fault),
        Command::BenchTransform { basis, sizes, reps } => {
            let bases: Vec<BasisKind> = basis.into_iter().map(Into::into).collect();
            commands::bench::run(&run, &bases, &sizes, reps)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
