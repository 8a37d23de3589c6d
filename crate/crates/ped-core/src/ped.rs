//! Iterative skip-unit pruning driven by dependence scores.
//!
//! One pruning stage, given the model's active units:
//!
//! 1. score every active unit's dependence on the labels,
//! 2. group the scores into `k` clusters on the line,
//! 3. keep one representative unit per cluster, prune the rest,
//! 4. retrain the smaller model from its current weights.
//!
//! [`run_ped`] repeats this against anything implementing
//! [`ModelAdapter`] until the stage schedule runs out. [`select_units`]
//! is the pure middle of a stage: profile in, kept units out. It also
//! implements the two baselines used for comparison (keep the top `k`
//! scores, keep `k` units at random), so alternatives differ only in the
//! selection rule.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster1d::{ckmeans, cluster_means, ClusterError, Clustering};
use crate::energy::{
    dependence_profile, DependenceProfile, EnergyError, EstimatorVariant,
};
use crate::io::{FeatureMatrix, LabelVector};

#[derive(Debug, Error)]
pub enum PedError {
    #[error("k must satisfy 1 <= k <= {units}; got {k}")]
    BadK { k: usize, units: usize },
    #[error("invalid schedule: {detail}")]
    InvalidSchedule { detail: String },
    #[error("stage {stage}: {message}")]
    Adapter { stage: usize, message: String },
    /// Numerical failure inside the model (diverged training and the
    /// like), kept apart from plumbing errors so callers can exit
    /// differently on it.
    #[error("stage {stage}: {message}")]
    Numeric { stage: usize, message: String },
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("policy has {policy_units} units but the model has {model_units}")]
    PolicyLength {
        policy_units: usize,
        model_units: usize,
    },
    #[error("policy must keep at least one unit active")]
    EmptyPolicy,
    #[error("policy re-activates unit {unit}, which is already pruned")]
    PolicyNotNested { unit: usize },
    #[error("inconsistent policy: {detail}")]
    PolicyInconsistent { detail: String },
}

/// Which member represents a cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadMode {
    /// Member with the largest dependence score.
    MaxValue,
    /// Member closest to the cluster mean.
    NearestCentroid,
}

/// How a stage decides which units survive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Cluster the scores and keep one head per cluster.
    ClusterHead(HeadMode),
    /// Keep the `k` highest scores.
    TopK,
    /// Keep `k` units drawn uniformly at random.
    Random,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::ClusterHead(HeadMode::MaxValue) => write!(f, "cluster-head"),
            Strategy::ClusterHead(HeadMode::NearestCentroid) => write!(f, "cluster-head-centroid"),
            Strategy::TopK => write!(f, "top-k"),
            Strategy::Random => write!(f, "random"),
        }
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cluster-head" => Ok(Strategy::ClusterHead(HeadMode::MaxValue)),
            "cluster-head-centroid" => Ok(Strategy::ClusterHead(HeadMode::NearestCentroid)),
            "top-k" => Ok(Strategy::TopK),
            "random" => Ok(Strategy::Random),
            other => Err(format!(
                "unknown strategy {other:?}, expected cluster-head, cluster-head-centroid, top-k, or random"
            )),
        }
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which units of a model are active. `alphas[u]` is 1 while unit `u`
/// is active and 0 once it is pruned; `active_set` lists the active unit
/// ids ascending. `stage` counts how many pruning stages produced it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy")]
pub struct PruningPolicy {
    stage: usize,
    alphas: Vec<u8>,
    active_set: Vec<usize>,
}

#[derive(Deserialize)]
struct RawPolicy {
    stage: usize,
    alphas: Vec<u8>,
    active_set: Vec<usize>,
}

impl TryFrom<RawPolicy> for PruningPolicy {
    type Error = PedError;

    fn try_from(raw: RawPolicy) -> Result<Self, PedError> {
        let policy = PruningPolicy::from_alphas(raw.alphas, raw.stage)?;
        if policy.active_set != raw.active_set {
            return Err(PedError::PolicyInconsistent {
                detail: format!(
                    "active_set {:?} does not match alphas (expected {:?})",
                    raw.active_set, policy.active_set
                ),
            });
        }
        Ok(policy)
    }
}

impl PruningPolicy {
    /// Policy with all `units` active, stage 0.
    pub fn all_active(units: usize) -> Result<Self, PedError> {
        Self::from_alphas(vec![1; units], 0)
    }

    pub fn from_alphas(alphas: Vec<u8>, stage: usize) -> Result<Self, PedError> {
        if let Some(bad) = alphas.iter().find(|&&a| a > 1) {
            return Err(PedError::PolicyInconsistent {
                detail: format!("alphas must be 0 or 1, found {bad}"),
            });
        }
        let active_set: Vec<usize> = alphas
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == 1)
            .map(|(u, _)| u)
            .collect();
        if active_set.is_empty() {
            return Err(PedError::EmptyPolicy);
        }
        Ok(PruningPolicy {
            stage,
            alphas,
            active_set,
        })
    }

    /// Policy over `units` units keeping exactly `active` (unit ids).
    pub fn from_active_set(units: usize, active: &[usize], stage: usize) -> Result<Self, PedError> {
        let mut alphas = vec![0u8; units];
        for &u in active {
            if u >= units {
                return Err(PedError::PolicyInconsistent {
                    detail: format!("unit id {u} out of range for {units} units"),
                });
            }
            alphas[u] = 1;
        }
        Self::from_alphas(alphas, stage)
    }

    pub fn unit_count(&self) -> usize {
        self.alphas.len()
    }

    pub fn active_count(&self) -> usize {
        self.active_set.len()
    }

    pub fn active_set(&self) -> &[usize] {
        &self.active_set
    }

    pub fn alphas(&self) -> &[u8] {
        &self.alphas
    }

    pub fn is_active(&self, unit: usize) -> bool {
        self.alphas.get(unit).copied() == Some(1)
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    /// True when every unit active here is also active in `earlier`:
    /// pruning only ever removes units.
    pub fn is_nested_in(&self, earlier: &PruningPolicy) -> bool {
        self.alphas.len() == earlier.alphas.len()
            && self
                .active_set
                .iter()
                .all(|&u| earlier.is_active(u))
    }

    /// First unit this policy re-activates relative to `earlier`, if any.
    pub fn nesting_violation(&self, earlier: &PruningPolicy) -> Option<usize> {
        self.active_set
            .iter()
            .copied()
            .find(|&u| !earlier.is_active(u))
    }
}

/// Outcome of one selection: which profile positions survive, plus the
/// clustering when the strategy used one.
#[derive(Clone, Debug, Serialize)]
pub struct Selection {
    pub k: usize,
    pub strategy: Strategy,
    /// Kept positions into the profiled unit list, ascending.
    pub kept: Vec<usize>,
    pub clustering: Option<Clustering>,
}

/// Chooses `k` of the profiled units to keep.
///
/// Positions refer to entries of `profile.units`, not to model unit ids;
/// callers prune a live model by mapping positions through their active
/// unit list. `seed` only matters for [`Strategy::Random`].
pub fn select_units(
    profile: &DependenceProfile,
    k: usize,
    strategy: Strategy,
    seed: u64,
) -> Result<Selection, PedError> {
    let m = profile.len();
    if k == 0 || k > m {
        return Err(PedError::BadK { k, units: m });
    }
    let values = profile.values();
    match strategy {
        Strategy::ClusterHead(mode) => {
            let clustering = ckmeans(&values, k)?;
            let means = cluster_means(&values, &clustering);
            let mut kept = Vec::with_capacity(k);
            for (cluster, &mean) in means.iter().enumerate() {
                let members = clustering.members(cluster);
                let head = match mode {
                    HeadMode::MaxValue => {
                        let mut best = members[0];
                        for &t in &members[1..] {
                            if values[t] > values[best] {
                                best = t;
                            }
                        }
                        best
                    }
                    HeadMode::NearestCentroid => {
                        let mut best = members[0];
                        let mut best_gap = (values[best] - mean).abs();
                        for &t in &members[1..] {
                            let gap = (values[t] - mean).abs();
                            if gap < best_gap {
                                best = t;
                                best_gap = gap;
                            }
                        }
                        best
                    }
                };
                kept.push(head);
            }
            kept.sort_unstable();
            Ok(Selection {
                k,
                strategy,
                kept,
                clustering: Some(clustering),
            })
        }
        Strategy::TopK => {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
            let mut kept: Vec<usize> = order[..k].to_vec();
            kept.sort_unstable();
            Ok(Selection {
                k,
                strategy,
                kept,
                clustering: None,
            })
        }
        Strategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut rng);
            let mut kept: Vec<usize> = order[..k].to_vec();
            kept.sort_unstable();
            Ok(Selection {
                k,
                strategy,
                kept,
                clustering: None,
            })
        }
    }
}

/// One offline selection step over a stored profile. `degenerate` flags
/// the no-op case `k == profile.len()`, where nothing would be pruned.
#[derive(Clone, Debug, Serialize)]
pub struct OfflineStep {
    pub selection: Selection,
    pub degenerate: bool,
}

pub fn offline_step(
    profile: &DependenceProfile,
    k: usize,
    strategy: Strategy,
    seed: u64,
) -> Result<OfflineStep, PedError> {
    let selection = select_units(profile, k, strategy, seed)?;
    Ok(OfflineStep {
        degenerate: k == profile.len(),
        selection,
    })
}

/// How many clusters each stage asks for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StageSchedule {
    /// `stages` rounds of `k = active - 1`, stopping early at one unit.
    Decrement { stages: usize },
    /// Explicit cluster counts, strictly decreasing.
    Explicit { ks: Vec<usize> },
}

impl StageSchedule {
    pub fn validate(&self, initial_active: usize) -> Result<(), PedError> {
        match self {
            StageSchedule::Decrement { stages } => {
                if *stages == 0 {
                    return Err(PedError::InvalidSchedule {
                        detail: "decrement schedule needs at least one stage".to_string(),
                    });
                }
                Ok(())
            }
            StageSchedule::Explicit { ks } => {
                if ks.is_empty() {
                    return Err(PedError::InvalidSchedule {
                        detail: "explicit schedule needs at least one k".to_string(),
                    });
                }
                if ks[0] > initial_active {
                    return Err(PedError::InvalidSchedule {
                        detail: format!(
                            "first k {} exceeds the {} active units",
                            ks[0], initial_active
                        ),
                    });
                }
                for w in ks.windows(2) {
                    if w[1] >= w[0] {
                        return Err(PedError::InvalidSchedule {
                            detail: format!("ks must be strictly decreasing, got {} then {}", w[0], w[1]),
                        });
                    }
                }
                if *ks.last().unwrap() == 0 {
                    return Err(PedError::InvalidSchedule {
                        detail: "k must stay at least 1".to_string(),
                    });
                }
                Ok(())
            }
        }
    }

    /// Cluster count for `stage` given the current active-unit count, or
    /// `None` when the schedule is finished.
    pub fn k_for(&self, stage: usize, active: usize) -> Option<usize> {
        match self {
            StageSchedule::Decrement { stages } => {
                if stage < *stages && active > 1 {
                    Some(active - 1)
                } else {
                    None
                }
            }
            StageSchedule::Explicit { ks } => ks.get(stage).copied(),
        }
    }

    /// Upper bound on the number of stages.
    pub fn max_stages(&self) -> usize {
        match self {
            StageSchedule::Decrement { stages } => *stages,
            StageSchedule::Explicit { ks } => ks.len(),
        }
    }
}

/// Accuracy after a retraining pass.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RetrainMetrics {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// What the pruning loop needs from a model.
///
/// `feature_maps` returns one matrix per active unit, aligned with
/// `active_units()` and paired with the labels of the same samples.
/// `apply_policy` must reject policies that re-activate pruned units.
pub trait ModelAdapter {
    fn unit_count(&self) -> usize;
    fn active_units(&self) -> Vec<usize>;
    fn feature_maps(&mut self) -> Result<(Vec<FeatureMatrix>, LabelVector), PedError>;
    fn apply_policy(&mut self, policy: &PruningPolicy) -> Result<(), PedError>;
    fn retrain(&mut self) -> Result<RetrainMetrics, PedError>;
    fn param_count(&self) -> u64;
    fn flop_count(&self) -> u64;
}

/// Options shared by every stage of a pruning run.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub strategy: Strategy,
    pub variant: EstimatorVariant,
    pub subsample_cap: Option<usize>,
    pub seed: u64,
    /// Record wall-clock stage times. Off by default so reports are
    /// byte-stable across reruns.
    pub record_timings: bool,
}

impl RunOptions {
    pub fn new(strategy: Strategy, variant: EstimatorVariant, seed: u64) -> Self {
        RunOptions {
            strategy,
            variant,
            subsample_cap: None,
            seed,
            record_timings: false,
        }
    }
}

/// Everything one pruning stage did. `profile` positions line up with
/// `unit_ids`, the model unit ids that were active when the stage began.
#[derive(Clone, Debug, Serialize)]
pub struct StageReport {
    pub stage: usize,
    pub k: usize,
    pub strategy: Strategy,
    pub unit_ids: Vec<usize>,
    pub profile: DependenceProfile,
    pub clustering: Option<Clustering>,
    pub kept_units: Vec<usize>,
    pub policy: PruningPolicy,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub param_count: u64,
    pub flop_count: u64,
    pub wall_time_secs: Option<f64>,
}

/// Runs staged pruning against a model until the schedule ends.
///
/// Per stage, the subsample draw and any selection randomness use seeds
/// derived from `opts.seed` and the stage number, so a run is a pure
/// function of (model state, schedule, options).
pub fn run_ped(
    adapter: &mut dyn ModelAdapter,
    schedule: &StageSchedule,
    opts: &RunOptions,
) -> Result<Vec<StageReport>, PedError> {
    schedule.validate(adapter.active_units().len())?;
    let unit_count = adapter.unit_count();
    let mut reports = Vec::new();
    for stage in 0..schedule.max_stages() {
        let active = adapter.active_units();
        let k = match schedule.k_for(stage, active.len()) {
            Some(k) => k,
            None => break,
        };
        if k > active.len() {
            return Err(PedError::InvalidSchedule {
                detail: format!(
                    "stage {stage} asks for {k} clusters with only {} active units",
                    active.len()
                ),
            });
        }
        let started = Instant::now();
        let (maps, labels) = adapter.feature_maps()?;
        if maps.len() != active.len() {
            return Err(PedError::Adapter {
                stage,
                message: format!(
                    "adapter returned {} feature maps for {} active units",
                    maps.len(),
                    active.len()
                ),
            });
        }
        let profile = dependence_profile(
            &maps,
            &labels,
            opts.variant,
            opts.subsample_cap,
            crate::derive_seed(opts.seed, stage as u64 * 2),
        )?;
        let selection = select_units(
            &profile,
            k,
            opts.strategy,
            crate::derive_seed(opts.seed, stage as u64 * 2 + 1),
        )?;
        let kept_units: Vec<usize> = selection.kept.iter().map(|&t| active[t]).collect();
        let policy = PruningPolicy::from_active_set(unit_count, &kept_units, stage + 1)?;
        adapter.apply_policy(&policy)?;
        let metrics = adapter.retrain()?;
        reports.push(StageReport {
            stage,
            k,
            strategy: opts.strategy,
            unit_ids: active,
            profile,
            clustering: selection.clustering,
            kept_units,
            policy,
            train_accuracy: metrics.train_accuracy,
            test_accuracy: metrics.test_accuracy,
            param_count: adapter.param_count(),
            flop_count: adapter.flop_count(),
            wall_time_secs: opts.record_timings.then(|| started.elapsed().as_secs_f64()),
        });
    }
    Ok(reports)
}
