//! `ped toynet`: train, prune, and inspect the built-in skip network.
//!
//! The experiment tunables are shared across `train`, `ped-run`, and
//! `compare`; defaults give a residual 8-unit network on the rings
//! dataset. The network's weight-init seed is derived from the run seed,
//! so the echoed `net.seed` field is always 0.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use ped_core::energy::EstimatorVariant;
use ped_core::io::{write_feature_dump, write_labels, FeatureMatrix, StorageDtype};
use ped_core::ped::{StageReport, StageSchedule, Strategy};
use ped_core::toynet::{
    gen_synthetic, grad_check_suite, prepare_trained, run_experiment, save_checkpoint,
    Composition, DataConfig, DataKind, Experiment, PreparedRun, RunSummary, SkipNetConfig,
    StageZero,
};
use serde::Serialize;

use crate::common::{emit, load_file_opts, path_str, pick, to_json_line, CliError, FileOpts};

pub const D_UNITS: usize = 8;
pub const D_WIDTH: usize = 16;
pub const D_INPUT_DIM: usize = 2;
pub const D_CLASSES: usize = 2;
pub const D_COMPOSITION: Composition = Composition::Residual;
pub const D_KIND: DataKind = DataKind::Rings;
pub const D_N: usize = 2000;
pub const D_NOISE: f64 = 0.45;
pub const D_EPOCHS: usize = 40;
pub const D_LR: f64 = 0.1;
pub const D_BATCH_SIZE: usize = 32;
pub const D_RETRAIN_EPOCHS: usize = 10;
pub const D_SPLIT_TRAIN: f64 = 0.7;
pub const D_SPLIT_PROBE: f64 = 0.15;
pub const D_STAGES: usize = 4;
pub const D_SEED: u64 = 0;
const D_GRAD_CASES: usize = 50;
const D_GRAD_EPS: f64 = 1e-6;
const GRAD_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Subcommand)]
pub enum ToynetCmd {
    /// Train a fresh network; optionally checkpoint it or dump probe
    /// feature maps for the offline tools.
    Train(TrainArgs),
    /// Iteratively prune with per-stage retraining and reports.
    PedRun(PedRunArgs),
    /// Compare analytic and finite-difference gradients on randomly
    /// drawn configurations.
    GradCheck(GradCheckArgs),
    /// Draw a synthetic dataset and write it as feature + label dumps.
    GenData(GenDataArgs),
}

pub fn run(cmd: ToynetCmd) -> Result<(), CliError> {
    match cmd {
        ToynetCmd::Train(args) => run_train(args),
        ToynetCmd::PedRun(args) => run_ped_run(args),
        ToynetCmd::GradCheck(args) => run_grad_check(args),
        ToynetCmd::GenData(args) => run_gen_data(args),
    }
}

/// Experiment tunables shared by train, ped-run, and compare.
#[derive(Debug, Clone, Default, Args)]
pub struct ToyFlags {
    /// Skip units in the network.
    #[arg(long)]
    units: Option<usize>,
    /// Stem width; unit hidden width defaults to it too.
    #[arg(long)]
    width: Option<usize>,
    /// Hidden width inside each unit (residual composition requires it
    /// to equal the stem width).
    #[arg(long)]
    unit_width: Option<usize>,
    /// Input dimension of the data and the network.
    #[arg(long)]
    input_dim: Option<usize>,
    /// Number of classes.
    #[arg(long)]
    classes: Option<usize>,
    /// How unit outputs join the stream: residual or dense.
    #[arg(long)]
    composition: Option<Composition>,
    /// Synthetic family: rings or blobs.
    #[arg(long)]
    kind: Option<DataKind>,
    /// Samples drawn before splitting.
    #[arg(long)]
    n: Option<usize>,
    /// Noise level of the synthetic draw.
    #[arg(long)]
    noise: Option<f64>,
    /// Initial training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate for training and retraining.
    #[arg(long)]
    lr: Option<f64>,
    /// Minibatch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Retraining epochs after each pruning stage.
    #[arg(long)]
    retrain_epochs: Option<usize>,
    /// Fraction of each class used for training.
    #[arg(long)]
    split_train: Option<f64>,
    /// Fraction of each class held out for dependence scoring.
    #[arg(long)]
    split_probe: Option<f64>,
    /// Estimator variant for dependence scoring: v or u.
    #[arg(long)]
    variant: Option<EstimatorVariant>,
    /// Probe rows subsampled before scoring; 0 scores every row.
    #[arg(long)]
    subsample_cap: Option<usize>,
}

/// How many pruning stages to run. `--stages` drops one unit per stage;
/// `--ks` gives explicit per-stage cluster counts.
#[derive(Debug, Clone, Default, Args)]
pub struct ScheduleFlags {
    /// Stages, each dropping one unit.
    #[arg(long, conflicts_with = "ks")]
    stages: Option<usize>,
    /// Explicit per-stage cluster counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
}

fn resolve_schedule(flags: Option<&ScheduleFlags>, file: &FileOpts) -> Result<StageSchedule, CliError> {
    // Flags beat the file as a group: either schedule flag silences
    // both file fields, so a file schedule cannot leak under a flag one.
    let (stages, ks) = match flags {
        Some(f) if f.stages.is_some() || f.ks.is_some() => (f.stages, f.ks.clone()),
        _ => (file.stages, file.ks.clone()),
    };
    match (stages, ks) {
        (Some(_), Some(_)) => Err(CliError::Data(
            "stages and ks are mutually exclusive".into(),
        )),
        (Some(stages), None) => Ok(StageSchedule::Decrement { stages }),
        (None, Some(ks)) => Ok(StageSchedule::Explicit { ks }),
        (None, None) => Ok(StageSchedule::Decrement { stages: D_STAGES }),
    }
}

pub fn resolve_experiment(
    toy: &ToyFlags,
    sched: Option<&ScheduleFlags>,
    file: &FileOpts,
) -> Result<Experiment, CliError> {
    let width = pick(toy.width, file.width, D_WIDTH);
    let input_dim = pick(toy.input_dim, file.input_dim, D_INPUT_DIM);
    let cap = pick(toy.subsample_cap, file.subsample_cap, 0);
    let net = SkipNetConfig {
        input_dim,
        stem_width: width,
        units: pick(toy.units, file.units, D_UNITS),
        unit_width: pick(toy.unit_width, file.unit_width, width),
        classes: pick(toy.classes, file.classes, D_CLASSES),
        composition: pick(toy.composition, file.composition, D_COMPOSITION),
        // Derived from the run seed at training time.
        seed: 0,
    };
    let data = DataConfig {
        kind: pick(toy.kind, file.kind, D_KIND),
        n: pick(toy.n, file.n, D_N),
        input_dim,
        noise: pick(toy.noise, file.noise, D_NOISE),
    };
    Ok(Experiment {
        net,
        data,
        split_train: pick(toy.split_train, file.split_train, D_SPLIT_TRAIN),
        split_probe: pick(toy.split_probe, file.split_probe, D_SPLIT_PROBE),
        epochs: pick(toy.epochs, file.epochs, D_EPOCHS),
        lr: pick(toy.lr, file.lr, D_LR),
        batch_size: pick(toy.batch_size, file.batch_size, D_BATCH_SIZE),
        retrain_epochs: pick(toy.retrain_epochs, file.retrain_epochs, D_RETRAIN_EPOCHS),
        variant: pick(toy.variant, file.variant, EstimatorVariant::V),
        subsample_cap: (cap > 0).then_some(cap),
        schedule: resolve_schedule(sched, file)?,
    })
}

// ---------------------------------------------------------------- train

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    toy: ToyFlags,
    /// Master seed; data, split, init, and training derive from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Save the trained network here as a binary checkpoint.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Dump probe-split feature maps as BASE.u<ID>.pedf plus BASE.pedl.
    #[arg(long, value_name = "BASE")]
    dump_features: Option<PathBuf>,
    /// JSON file supplying defaults for the flags above.
    #[arg(long, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Write the payload here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct TrainConfigEcho<'a> {
    #[serde(flatten)]
    experiment: &'a Experiment,
    seed: u64,
}

#[derive(Serialize)]
struct TrainReport<'a> {
    config: TrainConfigEcho<'a>,
    train_accuracy: f64,
    test_accuracy: f64,
    param_count: u64,
    flop_count: u64,
    checkpoint: Option<String>,
    feature_dumps: Vec<String>,
    labels_dump: Option<String>,
}

fn dump_probe_features(
    run: &PreparedRun,
    base: &Path,
) -> Result<(Vec<String>, String), CliError> {
    let maps = run.net.extract_feature_maps(&run.probe.inputs)?;
    let base = path_str(base);
    let mut paths = Vec::with_capacity(maps.len());
    for (&unit, map) in run.net.policy().active_set().iter().zip(&maps) {
        let path = format!("{base}.u{unit}.pedf");
        write_feature_dump(map, &path)?;
        paths.push(path);
    }
    let labels_path = format!("{base}.pedl");
    write_labels(&run.probe.label_vector()?, &labels_path)?;
    Ok((paths, labels_path))
}

fn run_train(args: TrainArgs) -> Result<(), CliError> {
    let file = load_file_opts(args.config.as_deref())?;
    let exp = resolve_experiment(&args.toy, None, &file)?;
    let seed = pick(args.seed, file.seed, D_SEED);

    let prepared = prepare_trained(&exp, seed)?;
    let checkpoint = match &args.checkpoint {
        Some(path) => {
            save_checkpoint(&prepared.net, path)?;
            Some(path_str(path))
        }
        None => None,
    };
    let (feature_dumps, labels_dump) = match &args.dump_features {
        Some(base) => {
            let (paths, labels) = dump_probe_features(&prepared, base)?;
            (paths, Some(labels))
        }
        None => (Vec::new(), None),
    };

    let StageZero {
        train_accuracy,
        test_accuracy,
        param_count,
        flop_count,
    } = prepared.initial;
    let payload = to_json_line(&TrainReport {
        config: TrainConfigEcho {
            experiment: &exp,
            seed,
        },
        train_accuracy,
        test_accuracy,
        param_count,
        flop_count,
        checkpoint,
        feature_dumps,
        labels_dump,
    });
    emit(payload.as_bytes(), args.out.as_deref())
}

// -------------------------------------------------------------- ped-run

#[derive(Debug, Args)]
pub struct PedRunArgs {
    #[command(flatten)]
    toy: ToyFlags,
    #[command(flatten)]
    sched: ScheduleFlags,
    /// Per-stage strategy: cluster-head, cluster-head-centroid, top-k,
    /// or random.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Master seed; every stream derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Record wall-clock seconds per stage in the reports.
    #[arg(long)]
    timings: bool,
    /// Also write per-stage rows as CSV: stage, params, flops, accuracy.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    /// JSON file supplying defaults for the flags above.
    #[arg(long, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Write the payload here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct PedRunConfigEcho<'a> {
    #[serde(flatten)]
    experiment: &'a Experiment,
    strategy: Strategy,
    seed: u64,
    timings: bool,
}

#[derive(Serialize)]
struct PedRunReport<'a> {
    config: PedRunConfigEcho<'a>,
    initial: &'a StageZero,
    stages: &'a [StageReport],
}

/// The CSV `stage` column counts pruning stages applied, so the
/// untouched network is row 0 and the report for 0-based stage `t`
/// lands on row `t + 1` (its policy's stage count).
fn write_run_csv(summary: &RunSummary, path: &Path) -> Result<(), CliError> {
    let csv_err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["stage", "params", "flops", "accuracy"])
        .map_err(csv_err)?;
    w.write_record([
        "0".to_string(),
        summary.initial.param_count.to_string(),
        summary.initial.flop_count.to_string(),
        summary.initial.test_accuracy.to_string(),
    ])
    .map_err(csv_err)?;
    for stage in &summary.stages {
        w.write_record([
            stage.policy.stage().to_string(),
            stage.param_count.to_string(),
            stage.flop_count.to_string(),
            stage.test_accuracy.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn run_ped_run(args: PedRunArgs) -> Result<(), CliError> {
    let file = load_file_opts(args.config.as_deref())?;
    let exp = resolve_experiment(&args.toy, Some(&args.sched), &file)?;
    let strategy = pick(
        args.strategy,
        file.strategy,
        Strategy::ClusterHead(ped_core::ped::HeadMode::MaxValue),
    );
    let seed = pick(args.seed, file.seed, D_SEED);

    let summary = run_experiment(&exp, strategy, seed, args.timings)?;
    if let Some(path) = &args.csv {
        write_run_csv(&summary, path)?;
    }
    let payload = to_json_line(&PedRunReport {
        config: PedRunConfigEcho {
            experiment: &exp,
            strategy,
            seed,
            timings: args.timings,
        },
        initial: &summary.initial,
        stages: &summary.stages,
    });
    emit(payload.as_bytes(), args.out.as_deref())
}

// ----------------------------------------------------------- grad-check

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Random configurations to test.
    #[arg(long)]
    cases: Option<usize>,
    /// Finite-difference step.
    #[arg(long)]
    eps: Option<f64>,
    /// Master seed for the drawn configurations.
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
struct GradCheckConfig {
    cases: usize,
    eps: f64,
    seed: u64,
}

#[derive(Serialize)]
struct GradCheckReport {
    config: GradCheckConfig,
    max_rel_error: f64,
    threshold: f64,
    pass: bool,
}

fn run_grad_check(args: GradCheckArgs) -> Result<(), CliError> {
    let file = load_file_opts(args.config.as_deref())?;
    let cases = pick(args.cases, file.cases, D_GRAD_CASES);
    let eps = pick(args.eps, file.eps, D_GRAD_EPS);
    let seed = pick(args.seed, file.seed, D_SEED);

    let max_rel_error = grad_check_suite(cases, eps, seed)?;
    let pass = max_rel_error < GRAD_THRESHOLD;
    let payload = to_json_line(&GradCheckReport {
        config: GradCheckConfig { cases, eps, seed },
        max_rel_error,
        threshold: GRAD_THRESHOLD,
        pass,
    });
    emit(payload.as_bytes(), args.out.as_deref())?;
    if pass {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: max relative error {max_rel_error:e} >= {GRAD_THRESHOLD:e}"
        )))
    }
}

// ------------------------------------------------------------- gen-data

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output base path; writes BASE.pedf and BASE.pedl.
    #[arg(value_name = "BASE")]
    out_base: PathBuf,
    /// Synthetic family: rings or blobs.
    #[arg(long)]
    kind: Option<DataKind>,
    /// Samples to draw.
    #[arg(long)]
    n: Option<usize>,
    /// Number of classes.
    #[arg(long, visible_alias = "p")]
    classes: Option<usize>,
    /// Input dimension.
    #[arg(long)]
    input_dim: Option<usize>,
    /// Noise level of the draw.
    #[arg(long)]
    noise: Option<f64>,
    /// Storage dtype of the feature dump: f64 or f32.
    #[arg(long)]
    dtype: Option<StorageDtype>,
    /// Master seed for the draw.
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
struct GenDataConfig {
    kind: DataKind,
    n: usize,
    classes: usize,
    input_dim: usize,
    noise: f64,
    dtype: StorageDtype,
    seed: u64,
}

#[derive(Serialize)]
struct GenDataReport {
    config: GenDataConfig,
    features: String,
    labels: String,
    per_class: Vec<usize>,
}

fn run_gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let file = load_file_opts(args.config.as_deref())?;
    let config = GenDataConfig {
        kind: pick(args.kind, file.kind, D_KIND),
        n: pick(args.n, file.n, D_N),
        classes: pick(args.classes, file.classes, D_CLASSES),
        input_dim: pick(args.input_dim, file.input_dim, D_INPUT_DIM),
        noise: pick(args.noise, file.noise, D_NOISE),
        dtype: pick(args.dtype, file.dtype, StorageDtype::F64),
        seed: pick(args.seed, file.seed, D_SEED),
    };
    let classes = u32::try_from(config.classes)
        .map_err(|_| CliError::Data(format!("classes {} does not fit u32", config.classes)))?;

    let batch = gen_synthetic(
        config.kind,
        config.n,
        classes,
        config.input_dim,
        config.noise,
        config.seed,
    )?;
    let labels = batch.label_vector()?;
    let matrix = FeatureMatrix::with_dtype(batch.inputs, config.dtype)?;

    let base = path_str(&args.out_base);
    let features_path = format!("{base}.pedf");
    let labels_path = format!("{base}.pedl");
    write_feature_dump(&matrix, &features_path)?;
    write_labels(&labels, &labels_path)?;

    let payload = to_json_line(&GenDataReport {
        per_class: labels.class_counts(),
        config,
        features: features_path,
        labels: labels_path,
    });
    emit(payload.as_bytes(), args.out.as_deref())
}
