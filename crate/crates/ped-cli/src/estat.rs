//! `ped estat`: score per-unit dependence between feature dumps and
//! labels.

use std::path::PathBuf;

use clap::Args;
use ped_core::energy::{dependence_profile, DependenceProfile, EstimatorVariant};
use ped_core::io::{load_feature_dump, load_labels};
use serde::Serialize;

use crate::common::{emit, load_file_opts, path_str, pick, to_json_line, CliError};

#[derive(Debug, Args)]
pub struct EstatArgs {
    /// Feature dumps, one per unit, all over the same samples.
    #[arg(required = true, value_name = "FEATURES")]
    features: Vec<PathBuf>,
    /// Label file matching the feature rows.
    #[arg(long, value_name = "FILE")]
    labels: PathBuf,
    /// Estimator variant: v or u.
    #[arg(long)]
    variant: Option<EstimatorVariant>,
    /// Rows to subsample before scoring; 0 scores every row.
    #[arg(long)]
    subsample_cap: Option<usize>,
    /// Master seed; subsampling derives from it.
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
struct EstatConfig {
    variant: EstimatorVariant,
    subsample_cap: usize,
    seed: u64,
    labels: String,
    features: Vec<String>,
}

#[derive(Serialize)]
struct EstatReport<'a> {
    config: &'a EstatConfig,
    profile: &'a DependenceProfile,
}

pub fn run(args: EstatArgs) -> Result<(), CliError> {
    let file = load_file_opts(args.config.as_deref())?;
    let variant = pick(args.variant, file.variant, EstimatorVariant::V);
    let cap = pick(args.subsample_cap, file.subsample_cap, 0);
    let seed = pick(args.seed, file.seed, 0);

    let labels = load_labels(&args.labels)?;
    let mut maps = Vec::with_capacity(args.features.len());
    for path in &args.features {
        let map = load_feature_dump(path)?;
        if map.n() != labels.n() {
            return Err(CliError::Data(format!(
                "{}: {} rows do not match the {} labels in {}",
                path.display(),
                map.n(),
                labels.n(),
                args.labels.display()
            )));
        }
        maps.push(map);
    }

    let profile = dependence_profile(&maps, &labels, variant, (cap > 0).then_some(cap), seed)?;
    let config = EstatConfig {
        variant,
        subsample_cap: cap,
        seed,
        labels: path_str(&args.labels),
        features: args.features.iter().map(|p| path_str(p)).collect(),
    };
    let payload = to_json_line(&EstatReport {
        config: &config,
        profile: &profile,
    });
    emit(payload.as_bytes(), args.out.as_deref())
}
