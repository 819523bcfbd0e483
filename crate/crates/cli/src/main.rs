mod bench;
mod config;
mod run;
mod theory;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit codes shared by every subcommand.
pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_THEORY_FAIL: u8 = 3;

/// An error caused by the invocation rather than by the run itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "subsample-nn", version, about = "Train MLPs with sampled matrix products and check the error theory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its report.
    Train(RunArgs),
    /// Train a family of variants of one configuration.
    Sweep(SweepArgs),
    /// Check the error-propagation identities on constructed networks.
    VerifyTheory(theory::TheoryArgs),
    /// Compare analytic and simulated error of the sampled matrix product.
    MatmulBench(bench::BenchArgs),
}

#[derive(Args, Clone)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set policy.kind=alsh`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// `layers[=1,2,..]`, `batch_size=1,5,..` or `policy=exact,alsh,..`.
    #[arg(long)]
    vary: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => run::cmd_train(&args),
        Command::Sweep(args) => run::cmd_sweep(&args.run, &args.vary),
        Command::VerifyTheory(args) => theory::cmd_verify_theory(&args),
        Command::MatmulBench(args) => bench::cmd_matmul_bench(&args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}
