//! Wires the toy network into the pruning loop and orchestrates whole
//! experiments: generate data, train, prune stage by stage, compare
//! selection strategies.
//!
//! Dependence is always scored on a probe split the network never
//! trains on, so the scores measure what a unit's features carry about
//! the labels rather than what SGD memorised. Retraining after each
//! stage continues from the current weights.
//!
//! Every random choice derives from one run seed through fixed streams
//! (data, split, init, training, pruning, per-stage retrains), so a run
//! is reproducible end to end, and different strategies under the same
//! seed share their data and initial network exactly.

use serde::{Deserialize, Serialize};

use super::data::{gen_synthetic, stratified_split, Batch, DataKind};
use super::net::{SkipNetwork, TrainConfig};
use super::{count_flops, count_params, SkipNetConfig, ToynetError};
use crate::derive_seed;
use crate::energy::EstimatorVariant;
use crate::io::{FeatureMatrix, LabelVector};
use crate::ped::{
    run_ped, ModelAdapter, PedError, PruningPolicy, RetrainMetrics, RunOptions, StageReport,
    StageSchedule, Strategy,
};

const STREAM_DATA: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_TRAIN: u64 = 4;
const STREAM_PED: u64 = 5;
const STREAM_RETRAIN: u64 = 6;

/// How the adapter scores and retrains between stages.
#[derive(Clone, Debug)]
pub struct ToyAdapterConfig {
    pub variant: EstimatorVariant,
    pub subsample_cap: Option<usize>,
    pub retrain_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Base seed; stage `t` retrains with stream `t` of it.
    pub seed: u64,
}

/// A toy network plus its data splits, seen by the pruning loop.
pub struct ToyAdapter {
    net: SkipNetwork,
    train: Batch,
    probe: Batch,
    test: Batch,
    cfg: ToyAdapterConfig,
    stage: usize,
}

impl ToyAdapter {
    pub fn new(
        net: SkipNetwork,
        train: Batch,
        probe: Batch,
        test: Batch,
        cfg: ToyAdapterConfig,
    ) -> Result<Self, ToynetError> {
        if cfg.retrain_epochs == 0 {
            return Err(ToynetError::InvalidConfig {
                detail: "retraining needs at least one epoch".to_string(),
            });
        }
        for (name, batch) in [("train", &train), ("probe", &probe), ("test", &test)] {
            if batch.input_dim() != net.cfg().input_dim {
                return Err(ToynetError::InvalidConfig {
                    detail: format!(
                        "{name} split has input_dim {}, the network expects {}",
                        batch.input_dim(),
                        net.cfg().input_dim
                    ),
                });
            }
        }
        Ok(ToyAdapter {
            net,
            train,
            probe,
            test,
            cfg,
            stage: 0,
        })
    }

    pub fn net(&self) -> &SkipNetwork {
        &self.net
    }

    pub fn into_net(self) -> SkipNetwork {
        self.net
    }

    fn adapter_err(&self, err: impl std::fmt::Display) -> PedError {
        PedError::Adapter {
            stage: self.stage,
            message: err.to_string(),
        }
    }
}

impl ModelAdapter for ToyAdapter {
    fn unit_count(&self) -> usize {
        self.net.cfg().units
    }

    fn active_units(&self) -> Vec<usize> {
        self.net.policy().active_set().to_vec()
    }

    fn feature_maps(&mut self) -> Result<(Vec<FeatureMatrix>, LabelVector), PedError> {
        let maps = self
            .net
            .extract_feature_maps(&self.probe.inputs)
            .map_err(|e| self.adapter_err(e))?;
        let labels = self.probe.label_vector().map_err(|e| self.adapter_err(e))?;
        Ok((maps, labels))
    }

    fn apply_policy(&mut self, policy: &PruningPolicy) -> Result<(), PedError> {
        self.net.set_policy(policy).map_err(|e| match e {
            ToynetError::Ped(inner) => inner,
            other => self.adapter_err(other),
        })
    }

    fn retrain(&mut self) -> Result<RetrainMetrics, PedError> {
        let train_cfg = TrainConfig {
            epochs: self.cfg.retrain_epochs,
            lr: self.cfg.lr,
            batch_size: self.cfg.batch_size,
            seed: derive_seed(self.cfg.seed, self.stage as u64),
        };
        self.net.train(&self.train, &train_cfg).map_err(|e| match e {
            diverged @ ToynetError::DivergedLoss { .. } => PedError::Numeric {
                stage: self.stage,
                message: diverged.to_string(),
            },
            other => self.adapter_err(other),
        })?;
        self.stage += 1;
        Ok(RetrainMetrics {
            train_accuracy: self.net.accuracy(&self.train).map_err(|e| self.adapter_err(e))?,
            test_accuracy: self.net.accuracy(&self.test).map_err(|e| self.adapter_err(e))?,
        })
    }

    fn param_count(&self) -> u64 {
        count_params(self.net.cfg(), self.net.policy())
    }

    fn flop_count(&self) -> u64 {
        count_flops(self.net.cfg(), self.net.policy())
    }
}

/// Synthetic data request for an experiment; the class count comes from
/// the network config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub kind: DataKind,
    pub n: usize,
    pub input_dim: usize,
    pub noise: f64,
}

/// A full pruning experiment: data, network, training, and schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub net: SkipNetConfig,
    pub data: DataConfig,
    pub split_train: f64,
    pub split_probe: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub retrain_epochs: usize,
    pub variant: EstimatorVariant,
    pub subsample_cap: Option<usize>,
    pub schedule: StageSchedule,
}

/// Metrics of the trained, unpruned network.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StageZero {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub param_count: u64,
    pub flop_count: u64,
}

/// One strategy's full pruning trajectory under one seed.
#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub seed: u64,
    pub initial: StageZero,
    pub stages: Vec<StageReport>,
}

/// Data, splits, and the trained network an experiment starts from.
pub struct PreparedRun {
    pub net: SkipNetwork,
    pub train: Batch,
    pub probe: Batch,
    pub test: Batch,
    pub initial: StageZero,
}

/// Generates data and trains the full network for one run seed.
pub fn prepare_trained(exp: &Experiment, seed: u64) -> Result<PreparedRun, ToynetError> {
    if exp.data.input_dim != exp.net.input_dim {
        return Err(ToynetError::InvalidConfig {
            detail: format!(
                "data input_dim {} does not match the network's {}",
                exp.data.input_dim, exp.net.input_dim
            ),
        });
    }
    let data = gen_synthetic(
        exp.data.kind,
        exp.data.n,
        exp.net.classes as u32,
        exp.data.input_dim,
        exp.data.noise,
        derive_seed(seed, STREAM_DATA),
    )?;
    let (train, probe, test) =
        stratified_split(&data, exp.split_train, exp.split_probe, derive_seed(seed, STREAM_SPLIT))?;
    let mut cfg = exp.net.clone();
    cfg.seed = derive_seed(seed, STREAM_INIT);
    let mut net = SkipNetwork::new(cfg)?;
    net.train(
        &train,
        &TrainConfig {
            epochs: exp.epochs,
            lr: exp.lr,
            batch_size: exp.batch_size,
            seed: derive_seed(seed, STREAM_TRAIN),
        },
    )?;
    let initial = StageZero {
        train_accuracy: net.accuracy(&train)?,
        test_accuracy: net.accuracy(&test)?,
        param_count: count_params(net.cfg(), net.policy()),
        flop_count: count_flops(net.cfg(), net.policy()),
    };
    Ok(PreparedRun {
        net,
        train,
        probe,
        test,
        initial,
    })
}

/// Prunes a prepared network with one strategy. The preparation is
/// borrowed, so several strategies can start from the same trained
/// weights.
pub fn prune_from(
    exp: &Experiment,
    prepared: &PreparedRun,
    strategy: Strategy,
    seed: u64,
    record_timings: bool,
) -> Result<RunSummary, ToynetError> {
    let adapter_cfg = ToyAdapterConfig {
        variant: exp.variant,
        subsample_cap: exp.subsample_cap,
        retrain_epochs: exp.retrain_epochs,
        lr: exp.lr,
        batch_size: exp.batch_size,
        seed: derive_seed(seed, STREAM_RETRAIN),
    };
    let mut adapter = ToyAdapter::new(
        prepared.net.clone(),
        prepared.train.clone(),
        prepared.probe.clone(),
        prepared.test.clone(),
        adapter_cfg,
    )?;
    let mut opts = RunOptions::new(strategy, exp.variant, derive_seed(seed, STREAM_PED));
    opts.subsample_cap = exp.subsample_cap;
    opts.record_timings = record_timings;
    let stages = run_ped(&mut adapter, &exp.schedule, &opts)?;
    Ok(RunSummary {
        strategy,
        seed,
        initial: prepared.initial,
        stages,
    })
}

/// One seed, one strategy, end to end.
pub fn run_experiment(
    exp: &Experiment,
    strategy: Strategy,
    seed: u64,
    record_timings: bool,
) -> Result<RunSummary, ToynetError> {
    let prepared = prepare_trained(exp, seed)?;
    prune_from(exp, &prepared, strategy, seed, record_timings)
}

/// Runs every strategy under every seed. Strategies under the same seed
/// share their data and initial training exactly.
pub fn compare_strategies(
    exp: &Experiment,
    strategies: &[Strategy],
    seeds: &[u64],
    record_timings: bool,
) -> Result<Vec<RunSummary>, ToynetError> {
    let mut out = Vec::with_capacity(strategies.len() * seeds.len());
    for &seed in seeds {
        let prepared = prepare_trained(exp, seed)?;
        for &strategy in strategies {
            out.push(prune_from(exp, &prepared, strategy, seed, record_timings)?);
        }
    }
    Ok(out)
}
