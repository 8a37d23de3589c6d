//! Plumbing shared by every subcommand: the error-to-exit-code mapping,
//! config-file merging, and payload emission.
//!
//! Tunables resolve in three layers: a flag beats the config file, the
//! file beats the built-in default. Config files use one schema for all
//! subcommands (snake_case keys, matching the long flag names); fields a
//! command does not use are ignored, unknown keys are rejected.

use std::fs;
use std::io::Write;
use std::path::Path;

use ped_core::cluster1d::ClusterError;
use ped_core::energy::{EnergyError, EstimatorVariant};
use ped_core::io::{IoError, StorageDtype};
use ped_core::ped::{PedError, Strategy};
use ped_core::toynet::{Composition, DataKind, ToynetError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// What went wrong, grouped by exit code: usage and data problems exit
/// 2, numerical failures exit 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EnergyError> for CliError {
    fn from(e: EnergyError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ClusterError> for CliError {
    fn from(e: ClusterError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PedError> for CliError {
    fn from(e: PedError) -> Self {
        match e {
            PedError::Numeric { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ToynetError> for CliError {
    fn from(e: ToynetError) -> Self {
        match e {
            ToynetError::DivergedLoss { .. } => CliError::Numeric(e.to_string()),
            ToynetError::Ped(inner) => CliError::from(inner),
            other => CliError::Data(other.to_string()),
        }
    }
}

/// Every tunable a config file may set. One schema serves all
/// subcommands; each command reads the fields it understands.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileOpts {
    // dependence scoring
    pub variant: Option<EstimatorVariant>,
    pub subsample_cap: Option<usize>,
    pub seed: Option<u64>,
    // selection
    pub k: Option<usize>,
    pub strategy: Option<Strategy>,
    // network shape
    pub units: Option<usize>,
    pub width: Option<usize>,
    pub unit_width: Option<usize>,
    pub input_dim: Option<usize>,
    pub classes: Option<usize>,
    pub composition: Option<Composition>,
    // synthetic data
    pub kind: Option<DataKind>,
    pub n: Option<usize>,
    pub noise: Option<f64>,
    pub dtype: Option<StorageDtype>,
    // training
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub retrain_epochs: Option<usize>,
    pub split_train: Option<f64>,
    pub split_probe: Option<f64>,
    // pruning schedule
    pub stages: Option<usize>,
    pub ks: Option<Vec<usize>>,
    // strategy comparison
    pub strategies: Option<Vec<Strategy>>,
    pub seeds: Option<Vec<u64>>,
    // gradient checking
    pub cases: Option<usize>,
    pub eps: Option<f64>,
}

pub fn load_file_opts(path: Option<&Path>) -> Result<FileOpts, CliError> {
    let Some(path) = path else {
        return Ok(FileOpts::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: failed to read config: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: bad config: {e}", path.display())))
}

/// Flag beats file beats default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Serializes a payload as pretty JSON with a trailing newline.
pub fn to_json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("payload serializes");
    s.push('\n');
    s
}

/// Writes the payload to `--out` when given, stdout otherwise.
pub fn emit(payload: &[u8], out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, payload)
            .map_err(|e| CliError::Data(format!("{}: failed to write: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(payload)
                .and_then(|()| stdout.flush())
                .map_err(|e| CliError::Data(format!("stdout: {e}")))
        }
    }
}

pub fn path_str(path: &Path) -> String {
    path.display().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_split_data_from_numeric() {
        assert_eq!(CliError::Data("x".into()).exit_code(), 2);
        assert_eq!(CliError::Numeric("x".into()).exit_code(), 3);
    }

    #[test]
    fn diverged_loss_maps_to_numeric() {
        let e = ToynetError::DivergedLoss { epoch: 3, loss: f64::NAN };
        assert_eq!(CliError::from(e).exit_code(), 3);
        let e = ToynetError::InvalidConfig { detail: "x".into() };
        assert_eq!(CliError::from(e).exit_code(), 2);
        let e = PedError::Numeric { stage: 1, message: "x".into() };
        assert_eq!(CliError::from(e).exit_code(), 3);
    }

    #[test]
    fn pick_prefers_flag_then_file() {
        assert_eq!(pick(Some(1), Some(2), 3), 1);
        assert_eq!(pick(None, Some(2), 3), 2);
        assert_eq!(pick::<u32>(None, None, 3), 3);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<FileOpts>(r#"{"epoochs": 3}"#);
        assert!(err.is_err());
        let ok: FileOpts = serde_json::from_str(r#"{"epochs": 3, "strategy": "top-k"}"#).unwrap();
        assert_eq!(ok.epochs, Some(3));
        assert_eq!(ok.strategy, Some(Strategy::TopK));
    }
}
