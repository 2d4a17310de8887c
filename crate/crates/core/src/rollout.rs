//! Episodes and the asynchronous execution of allocation methods over them.
//!
//! An [`Episode`] is a short history of channel samples and active sets.
//! Every method is played over the same episode: at each time index only
//! active nodes may revise their power, inactive nodes keep their previous
//! level, and a node that has never been active stays silent. Performance is
//! measured on the channel of the last time index.

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{message_overhead, AggregationBuffer, EffectiveAdjacency};
use crate::async_sched::{invert_permutation, ActivationModel};
use crate::baselines::{check_wmmse_args, equal_allocation, random_transmit_probability, WmmseScope, WmmseState};
use crate::error::{invalid_arg, Result};
use crate::metrics::{link_capacity, PerformanceReport};
use crate::net_model::{sample_channel_with_pathloss, ChannelConfig, ChannelSample, Topology};
use crate::policy::{sample_allocation, AllocationDecision, LayerCache, PolicyParameters};
use crate::seeds::{derived_rng, SeedStreams};

/// A network instance: geometry, channel law and activation model.
#[derive(Debug, Clone)]
pub struct Environment {
    pub topology: Topology,
    pub channel: ChannelConfig,
    pub activation: ActivationModel,
    pathloss: Array2<f64>,
}

impl Environment {
    pub fn new(topology: Topology, channel: ChannelConfig, activation: ActivationModel) -> Result<Self> {
        channel.validate()?;
        if activation.m() != topology.m() {
            return Err(invalid_arg(format!(
                "activation model covers {} nodes, topology has {}",
                activation.m(),
                topology.m()
            )));
        }
        let pathloss = topology.pathloss_matrix(channel.pathloss_exponent)?;
        Ok(Self {
            topology,
            channel,
            activation,
            pathloss,
        })
    }

    pub fn m(&self) -> usize {
        self.topology.m()
    }

    pub fn pathloss(&self) -> &Array2<f64> {
        &self.pathloss
    }

    /// Draw `len` consecutive time indices. Channel and node states come from
    /// `fading_rng`, active sets from `activation_rng`.
    pub fn sample_episode<R1: Rng, R2: Rng>(
        &self,
        len: usize,
        fading_rng: &mut R1,
        activation_rng: &mut R2,
    ) -> Result<Episode> {
        if len == 0 {
            return Err(invalid_arg("episodes need at least one time index"));
        }
        let mut steps = Vec::with_capacity(len);
        for _ in 0..len {
            let sample = sample_channel_with_pathloss(&self.pathloss, &self.channel, fading_rng);
            let active = self.activation.sample(activation_rng)?;
            steps.push(EpisodeStep { sample, active });
        }
        Ok(Episode { steps })
    }

    /// Episode identified by `path` (sample family, then indices), seeded
    /// from the named streams so that it can be regenerated independently.
    pub fn seeded_episode(&self, len: usize, seeds: &SeedStreams, path: &[u64]) -> Result<Episode> {
        let mut fading = derived_rng(seeds.fading, path);
        let mut activation = derived_rng(seeds.activation, path);
        self.sample_episode(len, &mut fading, &mut activation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub sample: ChannelSample,
    pub active: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub steps: Vec<EpisodeStep>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn m(&self) -> usize {
        self.steps.first().map_or(0, |s| s.sample.m())
    }

    pub fn last(&self) -> &EpisodeStep {
        self.steps.last().expect("episodes are never empty")
    }

    /// Relabel nodes: node `i` of the result is node `perm[i]` of `self`,
    /// i.e. `H -> P^T H P`, `x -> P^T x` for the permutation matrix `P`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let inv = invert_permutation(perm);
        let steps = self
            .steps
            .iter()
            .map(|s| {
                let m = s.sample.m();
                let h = Array2::from_shape_fn((m, m), |(i, j)| s.sample.h[[perm[i], perm[j]]]);
                let x = Array1::from_iter(perm.iter().map(|&old| s.sample.x[old]));
                let mut active: Vec<usize> = s.active.iter().map(|&old| inv[old]).collect();
                active.sort_unstable();
                EpisodeStep {
                    sample: ChannelSample { h, x },
                    active,
                }
            })
            .collect();
        Self { steps }
    }
}

/// Execution constants shared by every method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutOptions {
    pub hops: usize,
    pub h_eps: f64,
    #[serde(default)]
    pub self_loops: bool,
    pub p0: f64,
    pub p_max: f64,
    pub noise_power: f64,
}

impl RolloutOptions {
    pub fn validate(&self) -> Result<()> {
        if self.hops == 0 {
            return Err(invalid_arg("aggregation depth K must be at least 1"));
        }
        if !(self.p0 > 0.0) || !(self.p_max >= 0.0) || !(self.noise_power > 0.0) {
            return Err(invalid_arg("p0 and noise power must be positive, P_max nonnegative"));
        }
        Ok(())
    }

    fn adjacency(&self, step: &EpisodeStep) -> EffectiveAdjacency {
        EffectiveAdjacency::build(&step.sample.h, &step.active, self.h_eps, self.self_loops)
    }
}

/// Run the message-passing protocol over an episode and return the buffer
/// at every time index.
pub fn aggregate_episode(episode: &Episode, opts: &RolloutOptions) -> Result<Vec<AggregationBuffer>> {
    let mut buffer = AggregationBuffer::zeros(episode.m(), opts.hops);
    let mut out = Vec::with_capacity(episode.len());
    for step in &episode.steps {
        buffer.advance(&opts.adjacency(step), step.sample.x.view())?;
        out.push(buffer.clone());
    }
    Ok(out)
}

/// Transmit probability of every node at every time index (`T x m`), all
/// nodes evaluated with the same parameters.
pub fn probability_trace(episode: &Episode, params: &PolicyParameters, opts: &RolloutOptions) -> Result<Array2<f64>> {
    let buffers = aggregate_episode(episode, opts)?;
    let m = episode.m();
    let mut q = Array2::zeros((episode.len(), m));
    for (t, buf) in buffers.iter().enumerate() {
        for i in 0..m {
            q[[t, i]] = params.forward(buf.sequence(i))?.0;
        }
    }
    Ok(q)
}

/// Decision in effect at a node, with what is needed for its score.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeAction {
    pub decision: AllocationDecision,
    pub cache: LayerCache,
    /// Time index at which the decision was made.
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRollout {
    /// Decision in effect at the final time index; `None` for never-active nodes.
    pub actions: Vec<Option<NodeAction>>,
    pub powers: Array1<f64>,
    pub f: Array1<f64>,
    /// Scalars exchanged over the episode.
    pub overhead: usize,
}

impl PolicyRollout {
    pub fn sum_capacity(&self) -> f64 {
        self.f.sum()
    }

    pub fn total_power(&self) -> f64 {
        self.powers.sum()
    }
}

/// Play the policy over an episode. Node `i` evaluates `params[i]`, its own
/// (possibly stale) copy of the shared parameters.
pub fn play_policy<R: Rng + ?Sized>(
    episode: &Episode,
    params: &[&PolicyParameters],
    opts: &RolloutOptions,
    rng: &mut R,
) -> Result<PolicyRollout> {
    let m = episode.m();
    if params.len() != m {
        return Err(invalid_arg(format!("{} parameter copies for {m} nodes", params.len())));
    }
    let mut buffer = AggregationBuffer::zeros(m, opts.hops);
    let mut actions: Vec<Option<NodeAction>> = vec![None; m];
    let mut overhead = 0;
    for (t, step) in episode.steps.iter().enumerate() {
        buffer.advance(&opts.adjacency(step), step.sample.x.view())?;
        overhead += message_overhead(step.active.len(), opts.hops);
        for &i in &step.active {
            let (q, cache) = params[i].forward(buffer.sequence(i))?;
            let decision = sample_allocation(q, opts.p0, rng);
            actions[i] = Some(NodeAction { decision, cache, t });
        }
    }
    let powers = Array1::from_iter(actions.iter().map(|a| a.as_ref().map_or(0.0, |a| a.decision.p)));
    let f = link_capacity(powers.view(), &episode.last().sample.h, opts.noise_power)?;
    Ok(PolicyRollout {
        actions,
        powers,
        f,
        overhead,
    })
}

/// Outcome of a baseline over an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub powers: Array1<f64>,
    pub f: Array1<f64>,
}

impl MethodOutcome {
    fn new(powers: Array1<f64>, episode: &Episode, opts: &RolloutOptions) -> Result<Self> {
        let f = link_capacity(powers.view(), &episode.last().sample.h, opts.noise_power)?;
        Ok(Self { powers, f })
    }
}

/// WMMSE with `rounds` iterations per time index on the current channel;
/// only active nodes move their amplitude, a node joins from `sqrt(p0)/2` on
/// its first activation.
pub fn play_wmmse(episode: &Episode, opts: &RolloutOptions, rounds: usize, scope: WmmseScope) -> Result<MethodOutcome> {
    let m = episode.m();
    let mut held = Array1::<f64>::zeros(m);
    let mut started = vec![false; m];
    for step in &episode.steps {
        check_wmmse_args(&step.sample.h, rounds, opts.p0, opts.noise_power)?;
        let mut updating = vec![false; m];
        let mut v = held.clone();
        for &i in &step.active {
            updating[i] = true;
            if !started[i] {
                started[i] = true;
                v[i] = opts.p0.sqrt() / 2.0;
            }
        }
        let g2 = scope.visible_gains(&step.sample.h);
        let mut state = WmmseState::from_amplitudes(v);
        for _ in 0..rounds {
            state.iterate(&g2, opts.p0, opts.noise_power, Some(&updating));
        }
        held = state.v;
    }
    MethodOutcome::new(held.mapv(|v| (v * v).min(opts.p0)), episode, opts)
}

/// Static equal split; needs no decisions, so activation is irrelevant.
pub fn play_equal(episode: &Episode, opts: &RolloutOptions) -> Result<MethodOutcome> {
    MethodOutcome::new(equal_allocation(episode.m(), opts.p_max)?, episode, opts)
}

/// Random on/off allocation, redrawn by active nodes.
pub fn play_random<R: Rng + ?Sized>(episode: &Episode, opts: &RolloutOptions, rng: &mut R) -> Result<MethodOutcome> {
    let m = episode.m();
    let prob = random_transmit_probability(m, opts.p0, opts.p_max)?;
    let mut powers = Array1::zeros(m);
    for step in &episode.steps {
        for &i in &step.active {
            powers[i] = if rng.random::<f64>() < prob { opts.p0 } else { 0.0 };
        }
    }
    MethodOutcome::new(powers, episode, opts)
}

/// Sample family tags used when deriving episode seeds.
pub mod family {
    pub const TRAIN: u64 = 0x7452_4149_4e00_0000;
    pub const EVAL: u64 = 0x4556_414c_0000_0000;
}

/// Baseline settings for comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineOptions {
    pub wmmse_rounds: usize,
    pub wmmse_scope: WmmseScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub agg_gnn: PerformanceReport,
    pub wmmse: PerformanceReport,
    pub equal: PerformanceReport,
    pub random: PerformanceReport,
}

impl Comparison {
    pub fn methods(&self) -> [(&'static str, &PerformanceReport); 4] {
        [
            ("agg_gnn", &self.agg_gnn),
            ("wmmse", &self.wmmse),
            ("equal", &self.equal),
            ("random", &self.random),
        ]
    }
}

/// Outcomes of all four methods on one episode.
pub struct EpisodeOutcomes {
    pub agg_gnn: PolicyRollout,
    pub wmmse: MethodOutcome,
    pub equal: MethodOutcome,
    pub random: MethodOutcome,
}

/// Play every method on `episode`. Policy and random draws use independent
/// streams derived from `seeds.policy`, `family` and `index`.
pub fn play_all(
    episode: &Episode,
    params: &PolicyParameters,
    opts: &RolloutOptions,
    baselines: &BaselineOptions,
    seeds: &SeedStreams,
    family: u64,
    index: u64,
) -> Result<EpisodeOutcomes> {
    let copies = vec![params; episode.m()];
    let agg_gnn = play_policy(
        episode,
        &copies,
        opts,
        &mut derived_rng(seeds.policy, &[family, index, 0]),
    )?;
    let random = play_random(episode, opts, &mut derived_rng(seeds.policy, &[family, index, 1]))?;
    Ok(EpisodeOutcomes {
        agg_gnn,
        wmmse: play_wmmse(episode, opts, baselines.wmmse_rounds, baselines.wmmse_scope)?,
        equal: play_equal(episode, opts)?,
        random,
    })
}

type PickOutcome = fn(&EpisodeOutcomes) -> (&Array1<f64>, &Array1<f64>);

/// Compare the policy with the baselines on `samples` shared episodes of
/// length `rollout_len`.
pub fn compare_methods(
    env: &Environment,
    params: &PolicyParameters,
    opts: &RolloutOptions,
    baselines: &BaselineOptions,
    seeds: &SeedStreams,
    samples: usize,
    rollout_len: usize,
) -> Result<Comparison> {
    if samples == 0 {
        return Err(invalid_arg("evaluation needs at least one sample"));
    }
    if rollout_len < opts.hops {
        return Err(invalid_arg("rollouts must be at least K steps long"));
    }
    let outcomes: Vec<EpisodeOutcomes> = (0..samples as u64)
        .into_par_iter()
        .map(|n| {
            let episode = env.seeded_episode(rollout_len, seeds, &[family::EVAL, n])?;
            play_all(&episode, params, opts, baselines, seeds, family::EVAL, n)
        })
        .collect::<Result<_>>()?;
    let report = |pick: PickOutcome| {
        let (f, p): (Vec<_>, Vec<_>) = outcomes
            .iter()
            .map(|o| {
                let (f, p) = pick(o);
                (f.clone(), p.clone())
            })
            .unzip();
        PerformanceReport::from_outcomes(&f, &p, opts.p_max)
    };
    Ok(Comparison {
        agg_gnn: report(|o| (&o.agg_gnn.f, &o.agg_gnn.powers))?,
        wmmse: report(|o| (&o.wmmse.f, &o.wmmse.powers))?,
        equal: report(|o| (&o.equal.f, &o.equal.powers))?,
        random: report(|o| (&o.random.f, &o.random.powers))?,
    })
}

/// Mean sum capacity of WMMSE, equal and random allocation (in that order)
/// over given episodes. Random draws for episode `b` use the stream
/// `seeds.policy` at `[path.., b, 1]`.
pub fn baseline_capacities(
    episodes: &[Episode],
    opts: &RolloutOptions,
    baselines: &BaselineOptions,
    seeds: &SeedStreams,
    path: &[u64],
) -> Result<[f64; 3]> {
    if episodes.is_empty() {
        return Err(invalid_arg("no episodes to evaluate"));
    }
    let per_episode: Vec<[f64; 3]> = episodes
        .par_iter()
        .enumerate()
        .map(|(b, ep)| {
            let mut sub = path.to_vec();
            sub.extend([b as u64, 1]);
            let wmmse = play_wmmse(ep, opts, baselines.wmmse_rounds, baselines.wmmse_scope)?;
            let equal = play_equal(ep, opts)?;
            let random = play_random(ep, opts, &mut derived_rng(seeds.policy, &sub))?;
            Ok([wmmse.f.sum(), equal.f.sum(), random.f.sum()])
        })
        .collect::<Result<_>>()?;
    let mut mean = [0.0; 3];
    for c in &per_episode {
        for k in 0..3 {
            mean[k] += c[k];
        }
    }
    Ok(mean.map(|v| v / episodes.len() as f64))
}

/// Monte-Carlo performance of the policy alone.
pub fn evaluate_policy(
    env: &Environment,
    params: &PolicyParameters,
    opts: &RolloutOptions,
    seeds: &SeedStreams,
    samples: usize,
    rollout_len: usize,
) -> Result<PerformanceReport> {
    if samples == 0 {
        return Err(invalid_arg("evaluation needs at least one sample"));
    }
    if rollout_len < opts.hops {
        return Err(invalid_arg("rollouts must be at least K steps long"));
    }
    let copies = vec![params; env.m()];
    let runs: Vec<PolicyRollout> = (0..samples as u64)
        .into_par_iter()
        .map(|n| {
            let episode = env.seeded_episode(rollout_len, seeds, &[family::EVAL, n])?;
            play_policy(
                &episode,
                &copies,
                opts,
                &mut derived_rng(seeds.policy, &[family::EVAL, n, 0]),
            )
        })
        .collect::<Result<_>>()?;
    let f: Vec<_> = runs.iter().map(|r| r.f.clone()).collect();
    let p: Vec<_> = runs.iter().map(|r| r.powers.clone()).collect();
    PerformanceReport::from_outcomes(&f, &p, opts.p_max)
}
