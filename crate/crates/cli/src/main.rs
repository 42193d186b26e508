mod args;
mod commands;
mod config;
mod output;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;

/// Short category tag for an error, taken from the library error when there is one.
fn category(err: &anyhow::Error) -> &'static str {
    use ridechain::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::InvalidArgument(_)) => "invalid-argument",
        Some(E::Infeasible(_) | E::InfeasibleMove { .. }) => "infeasible",
        Some(E::SizeLimit { .. }) => "size-limit",
        Some(E::IterationLimit { .. }) => "no-convergence",
        Some(E::HorizonTooShort { .. }) => "horizon-too-short",
        Some(E::OutOfScope(_)) => "out-of-scope",
        Some(E::ContractionViolated { .. }) => "contraction-violated",
        Some(E::FitFailure(_)) => "fit-failure",
        Some(E::Schema(_)) => "schema",
        Some(E::Parse(_)) => "parse",
        Some(E::Io(_)) | Some(E::Csv(_)) => "io",
        None if err.downcast_ref::<std::io::Error>().is_some() => "io",
        None => "invalid-argument",
    }
}

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let argv = match config::expand(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error[config]: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.threads {
        pool = pool.num_threads(k);
    }
    if let Err(e) = pool.build_global() {
        eprintln!("error[threads]: {e}");
        return ExitCode::from(2);
    }
    match commands::run(cli.command) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e:#}", category(&e));
            ExitCode::from(1)
        }
    }
}
