//! Experiment commands. Each writes its manifest first, then its results.

use std::path::{Path, PathBuf};

use aggnn_core::net_model::write_channel_trace;
use aggnn_core::policy::PolicyParameters;
use aggnn_core::rollout::{baseline_capacities, compare_methods, family, probability_trace, Comparison};
use aggnn_core::seeds::{derive_seed, derived_rng};
use aggnn_core::trainer::{IterationStats, Trainer};
use aggnn_core::{ActivationTrace, Environment, SeedStreams};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, IoContext, Result};
use crate::manifest::RunManifest;

pub const TRAINING_CSV: &str = "training.csv";
pub const MODEL_FILE: &str = "model.txt";
pub const EVALUATION_JSON: &str = "evaluation.json";
pub const EVALUATION_CSV: &str = "evaluation.csv";
pub const TRANSFER_SUMMARY_CSV: &str = "transfer_summary.csv";
pub const TRANSFER_NETWORKS_CSV: &str = "transfer_networks.csv";
pub const PERM_TEST_JSON: &str = "perm_test.json";

pub const TRAINING_HEADER: [&str; 9] = [
    "iteration",
    "capacity",
    "power",
    "lambda_norm",
    "mu",
    "param_norm",
    "wmmse",
    "equal",
    "random",
];

/// Tag mixed into permutation-test seeds.
const PERM_TAG: u64 = 0x5045_524d_0000_0000;

/// Largest probability discrepancy accepted by the permutation test.
pub const PERM_TOLERANCE: f64 = 1e-9;

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => CliError::artifact(path, format!("{other:?}")),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("results serialize");
    std::fs::write(path, text + "\n").at(path)
}

/// Load a model and check it fits the configured aggregation depth.
pub fn load_model(path: &Path, cfg: &ExperimentConfig) -> Result<PolicyParameters> {
    if !path.exists() {
        return Err(CliError::MissingArtifacts(format!(
            "model file {} not found",
            path.display()
        )));
    }
    let model = PolicyParameters::load(path)?;
    if model.shape.hops != cfg.policy.hops {
        return Err(CliError::Config(format!(
            "model aggregates {} hops but the config uses {}",
            model.shape.hops, cfg.policy.hops
        )));
    }
    Ok(model)
}

/// `<output.dir>/model.txt` unless given explicitly.
pub fn model_path(cfg: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    explicit.map_or_else(|| cfg.output.dir.join(MODEL_FILE), Path::to_path_buf)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkDump {
    pub m: usize,
    pub p_max: f64,
    pub topology: aggnn_core::Topology,
    pub activation: aggnn_core::ActivationModel,
    pub pathloss: Vec<Vec<f64>>,
}

/// Draw the configured network; write its description and a channel and
/// activation trace of one evaluation episode.
pub fn gen_net(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = &cfg.output.dir;
    RunManifest::new(
        "gen-net",
        cfg,
        &["network.json", "channel_trace.csv", "activation_trace.csv"],
    )?
    .write(dir, cfg)?;
    let env = cfg.environment()?;
    let dump = NetworkDump {
        m: env.m(),
        p_max: cfg.rollout_options().p_max,
        topology: env.topology.clone(),
        activation: env.activation.clone(),
        pathloss: env.pathloss().outer_iter().map(|r| r.to_vec()).collect(),
    };
    let path = dir.join("network.json");
    write_json(&path, &dump)?;

    let episode = env.seeded_episode(cfg.training.rollout_len, &cfg.seeds.streams(), &[family::EVAL, 0])?;
    let samples: Vec<_> = episode.steps.iter().map(|s| s.sample.clone()).collect();
    let trace = dir.join("channel_trace.csv");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&trace).at(&trace)?);
    write_channel_trace(&samples, &mut out).at(&trace)?;
    let active = ActivationTrace {
        active: episode.steps.iter().map(|s| s.active.clone()).collect(),
    };
    let act = dir.join("activation_trace.csv");
    active
        .write_csv(env.m(), std::fs::File::create(&act).at(&act)?)
        .at(&act)?;
    Ok(path)
}

/// One row of the training trace with baselines on the same batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub stats: IterationStats,
    pub wmmse: f64,
    pub equal: f64,
    pub random: f64,
}

impl TrainingRow {
    fn record(&self) -> [String; 9] {
        let s = &self.stats;
        [
            s.iteration.to_string(),
            s.capacity.to_string(),
            s.power.to_string(),
            s.lambda_norm.to_string(),
            s.mu.to_string(),
            s.param_norm.to_string(),
            self.wmmse.to_string(),
            self.equal.to_string(),
            self.random.to_string(),
        ]
    }
}

pub struct TrainOutcome {
    pub rows: Vec<TrainingRow>,
    pub model: PolicyParameters,
    pub evaluation: Comparison,
}

/// Train on the configured network, then evaluate the final iterate.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let dir = &cfg.output.dir;
    RunManifest::new(
        "train",
        cfg,
        &[TRAINING_CSV, MODEL_FILE, "checkpoints", EVALUATION_JSON, EVALUATION_CSV],
    )?
    .write(dir, cfg)?;
    let env = cfg.environment()?;
    let opts = cfg.rollout_options();
    let baselines = cfg.baselines();
    let seeds = cfg.seeds.streams();
    let init = cfg.initial_policy()?;
    let every = cfg.training.checkpoint_every;
    let checkpoints = dir.join("checkpoints");
    if every > 0 {
        std::fs::create_dir_all(&checkpoints).at(&checkpoints)?;
    }

    let trace_path = dir.join(TRAINING_CSV);
    let mut trace = csv_writer(&trace_path)?;
    trace
        .write_record(TRAINING_HEADER)
        .map_err(|e| csv_err(&trace_path, e))?;
    let mut trainer = Trainer::new(cfg.training.to_core(), &env, opts, init, seeds)?;
    let mut rows = Vec::with_capacity(cfg.training.iterations);
    for tau in 0..cfg.training.iterations {
        let report = trainer.step()?;
        let [wmmse, equal, random] = baseline_capacities(
            &report.episodes,
            &opts,
            &baselines,
            &seeds,
            &[family::TRAIN, tau as u64],
        )?;
        let row = TrainingRow {
            stats: report.stats,
            wmmse,
            equal,
            random,
        };
        trace.write_record(row.record()).map_err(|e| csv_err(&trace_path, e))?;
        rows.push(row);
        if every > 0 && (tau + 1) % every == 0 {
            let p = checkpoints.join(format!("model-{:06}.txt", tau + 1));
            trainer.params().save(&p).at(&p)?;
        }
    }
    trace.flush().at(&trace_path)?;
    let model = trainer.store.central;
    let p = dir.join(MODEL_FILE);
    model.save(&p).at(&p)?;
    let evaluation = write_evaluation(cfg, &env, &model, dir)?;
    Ok(TrainOutcome {
        rows,
        model,
        evaluation,
    })
}

fn write_evaluation(
    cfg: &ExperimentConfig,
    env: &Environment,
    model: &PolicyParameters,
    dir: &Path,
) -> Result<Comparison> {
    let c = compare_methods(
        env,
        model,
        &cfg.rollout_options(),
        &cfg.baselines(),
        &cfg.seeds.streams(),
        cfg.evaluation.samples,
        cfg.training.rollout_len,
    )?;
    write_json(&dir.join(EVALUATION_JSON), &c)?;
    let path = dir.join(EVALUATION_CSV);
    let mut out = csv_writer(&path)?;
    let w = |out: &mut csv::Writer<_>, rec: [String; 5]| out.write_record(rec).map_err(|e| csv_err(&path, e));
    w(
        &mut out,
        ["method", "mean", "stderr", "power", "power_stderr"].map(String::from),
    )?;
    for (name, r) in c.methods() {
        w(
            &mut out,
            [
                name.to_string(),
                r.sum_capacity.mean.to_string(),
                r.sum_capacity.stderr.to_string(),
                r.total_power.mean.to_string(),
                r.total_power.stderr.to_string(),
            ],
        )?;
    }
    out.flush().at(&path)?;
    Ok(c)
}

/// Evaluate a stored model on the configured network.
pub fn eval(cfg: &ExperimentConfig, model: &Path) -> Result<Comparison> {
    let model = load_model(model, cfg)?;
    let dir = &cfg.output.dir;
    RunManifest::new("eval", cfg, &[EVALUATION_JSON, EVALUATION_CSV])?.write(dir, cfg)?;
    write_evaluation(cfg, &cfg.environment()?, &model, dir)
}

/// Mean performance of each method on one transfer network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkResult {
    pub size: usize,
    pub redraw: usize,
    pub method: String,
    pub capacity: f64,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub size: usize,
    pub method: String,
    pub mean: f64,
    pub stderr: f64,
    pub networks: usize,
}

pub struct TransferOutcome {
    pub networks: Vec<NetworkResult>,
    pub summary: Vec<SizeSummary>,
}

impl TransferOutcome {
    pub fn mean(&self, size: usize, method: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.size == size && s.method == method)
            .map(|s| s.mean)
    }
}

/// Evaluate the same parameters on freshly drawn networks of every
/// configured size. Networks of the training size are same-size redraws.
pub fn transfer(cfg: &ExperimentConfig, model: &Path) -> Result<TransferOutcome> {
    let model = load_model(model, cfg)?;
    let dir = &cfg.output.dir;
    RunManifest::new("transfer", cfg, &[TRANSFER_SUMMARY_CSV, TRANSFER_NETWORKS_CSV])?.write(dir, cfg)?;
    let ev = &cfg.evaluation;
    let mut networks = Vec::new();
    let mut summary = Vec::new();
    for &size in &ev.transfer_sizes {
        let opts = cfg.rollout_options_for(size);
        let mut per_method: Vec<(&'static str, Vec<f64>)> = Vec::new();
        for redraw in 0..ev.transfer_redraws {
            let streams = cfg.transfer_streams(size, redraw);
            let env = cfg.environment_from(size, streams.topology, streams.activation)?;
            let c = compare_methods(
                &env,
                &model,
                &opts,
                &cfg.baselines(),
                &streams,
                ev.transfer_samples,
                cfg.training.rollout_len,
            )?;
            for (k, (name, r)) in c.methods().into_iter().enumerate() {
                if per_method.len() <= k {
                    per_method.push((name, Vec::new()));
                }
                per_method[k].1.push(r.sum_capacity.mean);
                networks.push(NetworkResult {
                    size,
                    redraw,
                    method: name.to_string(),
                    capacity: r.sum_capacity.mean,
                    power: r.total_power.mean,
                });
            }
        }
        for (name, caps) in per_method {
            let s = aggnn_core::metrics::MeanStderr::from_samples(&caps);
            summary.push(SizeSummary {
                size,
                method: name.to_string(),
                mean: s.mean,
                stderr: s.stderr,
                networks: s.n,
            });
        }
    }
    write_rows(&dir.join(TRANSFER_NETWORKS_CSV), &networks)?;
    write_rows(&dir.join(TRANSFER_SUMMARY_CSV), &summary)?;
    Ok(TransferOutcome { networks, summary })
}

pub(crate) fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = csv_writer(path)?;
    for r in rows {
        out.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    out.flush().at(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationFailure {
    pub seed: u64,
    pub permutation: Vec<usize>,
    pub discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationReport {
    pub trials: usize,
    pub m: usize,
    pub tolerance: f64,
    pub max_discrepancy: f64,
    pub failures: Vec<PermutationFailure>,
}

/// Largest `|q(P^T H P, P^T x)_i - q(H, x)_{perm[i]}|` over one rollout.
pub fn permutation_discrepancy(
    cfg: &ExperimentConfig,
    model: &PolicyParameters,
    seed: u64,
    perm: &[usize],
) -> Result<f64> {
    let m = perm.len();
    let streams = SeedStreams::from_master(seed);
    let env = cfg.environment_from(m, streams.topology, streams.activation)?;
    let opts = cfg.rollout_options_for(m);
    let episode = env.seeded_episode(cfg.training.rollout_len, &streams, &[0])?;
    let q = probability_trace(&episode, model, &opts)?;
    let q_hat = probability_trace(&episode.permuted(perm), model, &opts)?;
    let mut worst: f64 = 0.0;
    for t in 0..episode.len() {
        for (i, &old) in perm.iter().enumerate() {
            worst = worst.max((q_hat[[t, i]] - q[[t, old]]).abs());
        }
    }
    Ok(worst)
}

/// Check equivariance of the per-node transmit probabilities under random
/// relabelings of `evaluation.perm_m`-node networks.
pub fn perm_test(cfg: &ExperimentConfig, model: &PolicyParameters, trials: usize) -> Result<PermutationReport> {
    if trials == 0 {
        return Err(aggnn_core::Error::InvalidArgument("the permutation test needs at least one trial".into()).into());
    }
    let dir = &cfg.output.dir;
    RunManifest::new("perm-test", cfg, &[PERM_TEST_JSON])?.write(dir, cfg)?;
    let m = cfg.evaluation.perm_m;
    let mut report = PermutationReport {
        trials,
        m,
        tolerance: PERM_TOLERANCE,
        max_discrepancy: 0.0,
        failures: Vec::new(),
    };
    for trial in 0..trials {
        let seed = derive_seed(cfg.seeds.master, &[PERM_TAG, trial as u64]);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut derived_rng(seed, &[1]));
        let d = permutation_discrepancy(cfg, model, seed, &perm)?;
        report.max_discrepancy = report.max_discrepancy.max(d);
        if !(d <= PERM_TOLERANCE) {
            report.failures.push(PermutationFailure {
                seed,
                permutation: perm,
                discrepancy: d,
            });
        }
    }
    write_json(&dir.join(PERM_TEST_JSON), &report)?;
    if !report.failures.is_empty() {
        let list: Vec<String> = report
            .failures
            .iter()
            .map(|f| {
                format!(
                    "(seed {}, perm {:?}, delta {:.3e})",
                    f.seed, f.permutation, f.discrepancy
                )
            })
            .collect();
        return Err(CliError::PermutationFailure(format!(
            "{} of {trials} trials exceed {PERM_TOLERANCE:e}: {}",
            list.len(),
            list.join(", ")
        )));
    }
    Ok(report)
}
