//! `ped compare`: run several strategies over several seeds on one
//! experiment and emit an accuracy-versus-size CSV table.
//!
//! Stdout carries only the CSV; the effective config is echoed to
//! stderr as one JSON line so the table stays RFC-4180 clean.

use std::path::PathBuf;

use clap::Args;
use ped_core::ped::{HeadMode, Strategy};
use ped_core::toynet::{compare_strategies, Experiment};
use serde::Serialize;

use crate::common::{emit, load_file_opts, CliError};
use crate::toynet::{resolve_experiment, ScheduleFlags, ToyFlags};

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    toy: ToyFlags,
    #[command(flatten)]
    sched: ScheduleFlags,
    /// Strategies to run, comma separated.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<Strategy>>,
    /// Seeds to run, comma separated; strategies under the same seed
    /// share data and initial training.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// JSON file supplying defaults for the flags above.
    #[arg(long, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Write the CSV here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct CompareConfigEcho<'a> {
    #[serde(flatten)]
    experiment: &'a Experiment,
    strategies: &'a [Strategy],
    seeds: &'a [u64],
}

pub fn run(args: CompareArgs) -> Result<(), CliError> {
    let file = load_file_opts(args.config.as_deref())?;
    let exp = resolve_experiment(&args.toy, Some(&args.sched), &file)?;
    let strategies = args.strategies.or(file.strategies).unwrap_or_else(|| {
        vec![Strategy::ClusterHead(HeadMode::MaxValue), Strategy::Random]
    });
    let seeds = args.seeds.or(file.seeds).unwrap_or_else(|| vec![0, 1, 2]);
    if strategies.is_empty() {
        return Err(CliError::Data("need at least one strategy".into()));
    }
    if seeds.is_empty() {
        return Err(CliError::Data("need at least one seed".into()));
    }

    let echo = serde_json::to_string(&CompareConfigEcho {
        experiment: &exp,
        strategies: &strategies,
        seeds: &seeds,
    })
    .expect("config serializes");
    eprintln!("config: {echo}");

    let summaries = compare_strategies(&exp, &strategies, &seeds, false)?;

    let csv_err = |e: csv::Error| CliError::Data(format!("csv: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "strategy",
        "seed",
        "stage",
        "remaining_params_pct",
        "remaining_flops_pct",
        "accuracy",
    ])
    .map_err(csv_err)?;
    for summary in &summaries {
        let params0 = summary.initial.param_count as f64;
        let flops0 = summary.initial.flop_count as f64;
        // The stage column counts pruning stages applied, like the
        // ped-run CSV.
        for stage in &summary.stages {
            w.write_record([
                summary.strategy.to_string(),
                summary.seed.to_string(),
                stage.policy.stage().to_string(),
                (100.0 * stage.param_count as f64 / params0).to_string(),
                (100.0 * stage.flop_count as f64 / flops0).to_string(),
                stage.test_accuracy.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Data(format!("csv: {e}")))?;
    emit(&bytes, args.out.as_deref())
}
