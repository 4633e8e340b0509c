//! Command-line front end: JSONL readers and writers plus one function per
//! subcommand. Exit codes are 0 on success, 2 for bad input or flags and 3
//! when the evaluation is undefined.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod records;

use std::ffi::OsString;

use clap::Parser;

pub use args::{Cli, Command, EvalArgs, GateArgs, MergeArgs, SynthArgs};
pub use commands::eval::cmd_eval;
pub use commands::gate::cmd_gate;
pub use commands::merge::cmd_merge;
pub use commands::synth::cmd_synth;
pub use error::{CliError, EXIT_DOMAIN, EXIT_INPUT};

pub fn run(cli: &Cli) -> error::Result<()> {
    match &cli.command {
        Command::Merge(a) => {
            let n = cmd_merge(a)?;
            eprintln!("wrote {n} 3D boxes to {}", a.output.display());
        }
        Command::Eval(a) => {
            cmd_eval(a)?;
        }
        Command::Gate(a) => {
            let s = cmd_gate(a)?;
            eprintln!("scored {} proposals into {}", s.scores.len(), a.out.display());
        }
        Command::Synth(a) => {
            cmd_synth(a)?;
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args(argv: impl IntoIterator<Item = OsString>) -> i32 {
    let argv = match config::expand(argv.into_iter().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("stratdet: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("stratdet: {e}");
            e.exit_code()
        }
    }
}
