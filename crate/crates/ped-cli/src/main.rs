//! `ped`: energy-dependence scoring and skip-unit pruning from the
//! command line.
//!
//! Payloads are machine readable: JSON for reports, CSV for tables,
//! always with the effective configuration echoed so a run can be
//! reproduced from its output alone. Reruns with identical inputs and
//! seeds produce byte-identical payloads. Exit codes: 0 success, 2
//! usage or data error, 3 numerical failure.

mod common;
mod compare;
mod estat;
mod select;
mod toynet;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "ped",
    version,
    about = "Energy-dependence scoring and skip-unit pruning"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Score per-unit dependence between feature dumps and labels.
    Estat(estat::EstatArgs),
    /// Pick k units from a stored dependence profile.
    Select(select::SelectArgs),
    /// Train, prune, and inspect the built-in skip network.
    #[command(subcommand)]
    Toynet(toynet::ToynetCmd),
    /// Run strategies against each other and emit a CSV table.
    Compare(compare::CompareArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Estat(args) => estat::run(args),
        Cmd::Select(args) => select::run(args),
        Cmd::Toynet(cmd) => toynet::run(cmd),
        Cmd::Compare(args) => compare::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
