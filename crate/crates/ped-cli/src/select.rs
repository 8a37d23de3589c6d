//! `ped select`: pick `k` units from a stored dependence profile and
//! emit the matching pruning policy.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use ped_core::energy::DependenceProfile;
use ped_core::ped::{offline_step, PruningPolicy, Selection, Strategy};
use serde::{Deserialize, Serialize};

use crate::common::{emit, load_file_opts, path_str, pick, to_json_line, CliError};

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Profile JSON: either bare or an estat report wrapping one.
    #[arg(value_name = "PROFILE")]
    profile: PathBuf,
    /// Units to keep.
    #[arg(long)]
    k: Option<usize>,
    /// cluster-head, cluster-head-centroid, top-k, or random.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Master seed; only the random strategy draws from it.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON file supplying defaults for the flags above.
    #[arg(long, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Write the payload here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SelectConfig {
    k: usize,
    strategy: Strategy,
    seed: u64,
    profile: String,
}

#[derive(Serialize)]
struct SelectReport<'a> {
    config: &'a SelectConfig,
    selection: &'a Selection,
    /// True when `k` equals the number of profiled units, so nothing
    /// was actually dropped.
    degenerate: bool,
    /// Pruning state over the profiled units: `alphas[i]` follows
    /// `profile.units[i]`.
    policy: &'a PruningPolicy,
}

/// Accepts either a bare profile or an estat report.
#[derive(Deserialize)]
struct WrappedProfile {
    profile: DependenceProfile,
}

fn read_profile(path: &PathBuf) -> Result<DependenceProfile, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: failed to read profile: {e}", path.display())))?;
    serde_json::from_str::<DependenceProfile>(&text)
        .or_else(|_| serde_json::from_str::<WrappedProfile>(&text).map(|w| w.profile))
        .map_err(|e| CliError::Data(format!("{}: not a dependence profile: {e}", path.display())))
}

pub fn run(args: SelectArgs) -> Result<(), CliError> {
    let file = load_file_opts(args.config.as_deref())?;
    let Some(k) = args.k.or(file.k) else {
        return Err(CliError::Data("select needs --k".into()));
    };
    let strategy = pick(
        args.strategy,
        file.strategy,
        Strategy::ClusterHead(ped_core::ped::HeadMode::MaxValue),
    );
    let seed = pick(args.seed, file.seed, 0);

    let profile = read_profile(&args.profile)?;
    let step = offline_step(&profile, k, strategy, seed)?;

    let mut kept = step.selection.kept.clone();
    kept.sort_unstable();
    let policy = PruningPolicy::from_active_set(profile.len(), &kept, 1)?;

    let config = SelectConfig {
        k,
        strategy,
        seed,
        profile: path_str(&args.profile),
    };
    let payload = to_json_line(&SelectReport {
        config: &config,
        selection: &step.selection,
        degenerate: step.degenerate,
        policy: &policy,
    });
    emit(payload.as_bytes(), args.out.as_deref())
}
