//! Command-line front end: `gen`, `run`, `compare`, `bounds` and `verify`.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::Parser;

pub mod args;
pub mod commands;
pub mod output;

use args::{Cli, Command, Settings};

/// A problem with the invocation rather than with the computation.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

fn dispatch(command: &Command) -> anyhow::Result<String> {
    let env_out = std::env::var_os("ADASIZE_OUT").filter(|v| !v.is_empty()).map(PathBuf::from);
    let settings = Settings::resolve(command.flags(), env_out)?;
    match command {
        Command::Gen(_) => commands::gen(&settings),
        Command::Run(_) => commands::run(&settings),
        Command::Compare(_) => commands::compare(&settings),
        Command::Bounds(_) => commands::bounds(&settings),
        Command::Verify(_) => commands::verify(&settings),
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match dispatch(&cli.command) {
        Ok(text) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(text.as_bytes());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("adasize {}: error: {e:#}", cli.command.name());
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
