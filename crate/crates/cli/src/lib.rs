//! Command-line front end: argument parsing, config merging, manifests and
//! dispatch to the library.

pub mod args;
pub mod commands;
pub mod config;
pub mod output;
pub mod variables;

use args::{Cli, Command};
use clap::Parser;
use frulab::Error;
use std::ffi::OsString;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;
pub const EXIT_DATA: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Range { .. } | Error::Precondition(_) => EXIT_USAGE,
        Error::Format { .. } | Error::Io(_) | Error::Json(_) | Error::Shape { .. } => EXIT_DATA,
        Error::Singular { .. } | Error::Convergence { .. } | Error::Bracket { .. } | Error::NonFinite { .. } => EXIT_VERIFY,
    }
}

pub fn dispatch(cmd: &Command) -> commands::Outcome {
    match cmd {
        Command::Datagen(a) => commands::datagen(a),
        Command::Train(a) => commands::train(a),
        Command::Certify(a) => commands::certify(a),
        Command::Probe(a) => commands::probe(a),
        Command::Theory(a) => commands::theory(a),
        Command::Variables(a) => commands::variables(a),
    }
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run(argv: Vec<OsString>) -> i32 {
    let argv = match config::merge_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(true) => EXIT_OK,
        Ok(false) => {
            eprintln!("{}: verification failed", cli.command.name());
            EXIT_VERIFY
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
