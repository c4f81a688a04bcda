//! Thin command-line front end; all real work lives in [`rrwkv::runner`].

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rrwkv::config::RunConfig;
use rrwkv::runner::{run, Command, RunError, RunSummary};

#[derive(Parser)]
#[command(
    name = "rrwkv",
    version,
    about = "Train, audit, and measure RWKV and RRWKV sequence mixers"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on a synthetic task; writes metrics.csv and model.ckpt.
    Train(RunArgs),
    /// Evaluate a saved checkpoint on held-out samples; writes eval.csv.
    Eval(RunArgs),
    /// Audit hand-derived gradients against finite differences; writes
    /// gradreport.csv and fails on any relative error at or above 1e-4.
    Gradcheck(RunArgs),
    /// Count exact multiply-adds and median wall times over a length grid;
    /// writes bench.csv.
    Bench(RunArgs),
    /// Compute worst-case information-flow path lengths per architecture;
    /// writes pathlen.csv.
    Pathlen(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file of flat `key = value` lines (# comments allowed).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Inline `KEY=VALUE` settings, applied after the file.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn execute(cmd: Command, args: &RunArgs) -> Result<RunSummary, RunError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                RunError::Runtime(format!("cannot read config {}: {e}", path.display()))
            })?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::default(),
    };
    cfg.apply(&args.overrides)?;
    run(cmd, &cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match &cli.command {
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Eval(a) => (Command::Eval, a),
        Cmd::Gradcheck(a) => (Command::Gradcheck, a),
        Cmd::Bench(a) => (Command::Bench, a),
        Cmd::Pathlen(a) => (Command::Pathlen, a),
    };
    match execute(cmd, args) {
        Ok(summary) => {
            for line in &summary.lines {
                println!("{line}");
            }
            for file in &summary.files {
                println!("wrote {}", file.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
