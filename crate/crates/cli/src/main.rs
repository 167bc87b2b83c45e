//! `rmk`: parameter audits, forward dumps, gradient checks, the angle codec,
//! the boundary experiment and synthetic-scene evaluation.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.

mod checks;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use rmk_core::Scalar;

use commands::{CheckFailed, CodecCommand};
use config::Config;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Dtype {
    F32,
    F64,
}

#[derive(Debug, Parser)]
#[command(name = "rmk", version, about = "Oriented-detection building blocks: checks and tools")]
struct Cli {
    /// TOML configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides data.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides paths.out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Dtype::F64)]
    dtype: Dtype,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Strip vs square kernel parameter counts.
    ParamCount,
    /// Run the network on one image and dump every named intermediate.
    Forward {
        /// PGM or RMKT image; a zero image of data.height x data.width if omitted.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Use all-zero weights instead of seeded ones.
        #[arg(long)]
        zero_weights: bool,
    },
    /// Finite-difference gradient checks of every op and block.
    Gradcheck {
        /// Check every input coordinate of the assembly, not a probe set.
        #[arg(long)]
        full: bool,
    },
    /// Encode and decode angles.
    AngleCodec {
        #[arg(long)]
        omega: Option<f64>,
        #[command(subcommand)]
        action: CodecCommand,
    },
    /// Angle regression near the period boundary: codec vs direct.
    BoundaryExp,
    /// mAP of the detector on seeded synthetic scenes.
    Eval,
    /// Write seeded synthetic scenes as PGM images and box annotations.
    GenData,
}

fn run_typed<T: Scalar>(cfg: &Config, command: &Command) -> Result<String> {
    match command {
        Command::ParamCount => commands::param_count::<T>(cfg),
        Command::Forward { image, zero_weights } => commands::forward::<T>(cfg, image.as_deref(), *zero_weights),
        Command::Gradcheck { full } => commands::gradcheck::<T>(*full),
        Command::AngleCodec { omega, action } => commands::angle_codec::<T>(cfg, *omega, action),
        Command::BoundaryExp => commands::boundary_exp::<T>(cfg),
        Command::Eval => commands::eval::<T>(cfg),
        Command::GenData => commands::gen_data::<T>(cfg),
    }
}

fn run(cli: &Cli) -> Result<String> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.data.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out = Some(out.clone());
    }
    match cli.dtype {
        Dtype::F32 => run_typed::<f32>(&cfg, &cli.command),
        Dtype::F64 => run_typed::<f64>(&cfg, &cli.command),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) if e.downcast_ref::<CheckFailed>().is_some() => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
