//! `jsq-game`: command-line front end for the JSQ joining game.
//!
//! Every subcommand writes a CSV table to stdout (or `--out`) and a short
//! summary to stderr. Exit codes: 0 success, 1 invalid input, 2 unstable
//! parameters, 3 invalid certificate.

mod commands;
mod settings;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use jsq_game::csvio::Table;
use jsq_game::Error;

use settings::{load_config, resolve_seed, Cli, SEED_ENV};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_UNSTABLE: u8 = 2;
pub const EXIT_CERTIFICATE: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn invalid(message: impl Into<String>) -> Self {
        Self { code: EXIT_INVALID, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Unstable { .. } => EXIT_UNSTABLE,
            Error::Stiffness { .. } | Error::WeightsUnrepresentable { .. } => EXIT_CERTIFICATE,
            _ => EXIT_INVALID,
        };
        Self { code, message: e.to_string() }
    }
}

pub fn write_table(table: &Table, out: Option<&PathBuf>) -> Result<(), Failure> {
    let fail = |e: Error| Failure::invalid(e.to_string());
    match out {
        Some(path) => {
            let file = std::fs::File::create(path)
                .map_err(|e| Failure::invalid(format!("cannot create {}: {e}", path.display())))?;
            let mut w = std::io::BufWriter::new(file);
            table.write(&mut w).map_err(fail)?;
            w.flush().map_err(|e| Failure::invalid(e.to_string()))
        }
        None => table.write(std::io::stdout().lock()).map_err(fail),
    }
}

fn run() -> Result<u8, Failure> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return Ok(if e.use_stderr() { EXIT_INVALID } else { EXIT_OK });
        }
    };
    let settings = match &cli.config {
        Some(path) => cli.settings.or(load_config(path)?),
        None => cli.settings,
    };
    let seed = resolve_seed(&settings, std::env::var(SEED_ENV).ok())?;
    let ctx = commands::Context { settings, seed };
    let report = commands::run(cli.command, &ctx)?;
    write_table(&report.table, ctx.settings.out.as_ref())?;
    eprintln!("{}", report.summary);
    Ok(report.status)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
