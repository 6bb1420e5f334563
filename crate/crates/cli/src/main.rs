//! `fedcore` command-line driver.
//!
//! Exit statuses: 0 success, 2 usage or invalid configuration, 3 I/O or
//! malformed input files, 4 failure inside a component.

mod args;

use std::process::ExitCode;

use clap::Parser;
use fedcore::experiment::{compare_sweep, run_experiment};
use fedcore::{data, Error};

use args::{Cli, Command};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_COMPONENT: u8 = 4;

fn status(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) => EXIT_USAGE,
        Error::Io { .. } | Error::Idx(_) | Error::Container(_) | Error::Json(_) => EXIT_IO,
        _ => EXIT_COMPONENT,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(opts) => opts.resolve().map_err(Failure::Usage).and_then(|cfg| {
            let out = run_experiment(&cfg)?;
            println!("{}", out.summary);
            if let Some(b) = out.bound {
                println!(
                    "bound check: {} over {} runs (raw L: {})",
                    if b.report.pass { "pass" } else { "FAIL" },
                    b.report.n_runs,
                    match b.report.raw_l_pass {
                        Some(true) => "pass",
                        Some(false) => "fail",
                        None => "n/a",
                    }
                );
            }
            Ok(())
        }),
        Command::Sweep(opts) => {
            let strategies = opts.strategies.clone();
            opts.common.resolve().map_err(Failure::Usage).and_then(|cfg| {
                for row in compare_sweep(&cfg, &strategies)? {
                    println!("{row}");
                }
                Ok(())
            })
        }
        Command::GenSynthetic(g) => {
            let ds = data::generate_synthetic(g.alpha, g.beta, g.clients, g.seed);
            data::write_container(&ds, &g.out).map_err(Failure::from).map(|()| {
                println!(
                    "wrote {} clients, {} training samples, {} test samples to {}",
                    ds.n_clients(),
                    ds.total_train(),
                    ds.test_set.len(),
                    g.out.display()
                );
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(status(&e))
        }
    }
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}
