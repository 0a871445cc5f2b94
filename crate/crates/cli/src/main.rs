//! `gridpg`: policy-gradient search over affine integer grids.
//!
//! Exit codes: 0 success, 1 I/O error, 2 configuration error, 3 evaluator
//! failure, 4 invalid input.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{ArchSource, DescribeOptions, Overrides};
use exit::Failure;

#[derive(Parser)]
#[command(
    name = "gridpg",
    version,
    about = "Policy-gradient architecture search over integer grids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct SearchArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Evaluator URI, e.g. `oracle:separable?seed=7` or `cmd:python train.py`.
    #[arg(long)]
    evaluator: Option<String>,
    /// Concurrent evaluations.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl SearchArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            evaluator: self.evaluator.clone(),
            workers: self.workers,
            seed: self.seed,
            max_epochs: self.max_epochs,
            output: self.output.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a search, or continue one with --resume.
    Search {
        #[command(flatten)]
        args: SearchArgs,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Continue a search from a checkpoint.
    Resume {
        checkpoint: PathBuf,
        #[command(flatten)]
        args: SearchArgs,
    },
    /// Dice and Hausdorff distance between two label masks.
    Score {
        prediction: PathBuf,
        ground_truth: PathBuf,
        /// Classes to score, comma separated. Defaults to every non-background class.
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<u8>>,
        /// Pixel spacing `SX,SY` for distances.
        #[arg(long, value_parser = parse_spacing)]
        spacing: Option<(f64, f64)>,
    },
    /// Print the layer table, shapes and parameter count of an architecture.
    Describe {
        /// Policy file written by `search`.
        #[arg(required_unless_present = "preset", conflicts_with = "preset")]
        policy: Option<PathBuf>,
        /// Built-in architecture instead of a policy file.
        #[arg(long, value_parser = ["expert"])]
        preset: Option<String>,
        /// Input size `HxW`; both must be divisible by 4.
        #[arg(long, default_value = "200x200", value_parser = parse_size)]
        input: (u32, u32),
        #[arg(long, default_value_t = 1)]
        input_channels: u32,
        #[arg(long, default_value_t = 4)]
        classes: u32,
        /// Also write the rendered architecture JSON here.
        #[arg(long)]
        write_arch: Option<PathBuf>,
    },
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let num = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("`{v}`: {e}"));
    Ok((num(h)?, num(w)?))
}

fn parse_spacing(s: &str) -> Result<(f64, f64), String> {
    let (x, y) = s
        .split_once(',')
        .ok_or_else(|| format!("expected SX,SY, got `{s}`"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok((num(x)?, num(y)?))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Search { args, resume } => {
            commands::search(args.config.as_deref(), resume.as_deref(), &args.overrides())
        }
        Command::Resume { checkpoint, args } => {
            commands::search(args.config.as_deref(), Some(&checkpoint), &args.overrides())
        }
        Command::Score {
            prediction,
            ground_truth,
            classes,
            spacing,
        } => commands::score(&prediction, &ground_truth, classes.as_deref(), spacing),
        Command::Describe {
            policy,
            preset,
            input,
            input_channels,
            classes,
            write_arch,
        } => {
            let source = match (&policy, preset) {
                (Some(path), _) => ArchSource::Policy(path),
                (None, _) => ArchSource::Expert,
            };
            let options = DescribeOptions {
                input,
                input_channels,
                class_count: classes,
                write_arch,
            };
            commands::describe(source, &options)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRIDPG_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(failure) => {
            eprintln!("gridpg: {failure}");
            ExitCode::from(failure.code)
        }
    }
}
