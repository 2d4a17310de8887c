//! Offline primal-dual training with asynchronously stale parameter copies.
//!
//! The learner keeps one central iterate `A(tau)`. Node `i` holds a copy
//! `A_i(tau)` that is refreshed only when `i` is active at iteration `tau`;
//! rollouts are played with the copies, and score-function gradients
//! computed at each copy are summed into the central coordinates.
//!
//! Per iteration, with batch means `f_hat` and `P_hat = mean(1^T p)`:
//!
//! ```text
//! r      <- r + eps (1 - lambda)
//! A      <- A + eps grad_A [lambda^T E f + mu_s E 1^T p]
//! lambda <- lambda - eps (f_hat - r)
//! mu     <- [mu + s eps (P_hat - P_max)]^+
//! ```
//!
//! with `mu_s = -mu`, `s = +1` under the constraint-enforcing convention and
//! `mu_s = +mu`, `s = -1` under the literal one.

use std::io::{self, Write};

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};
use crate::policy::{score_logit, PolicyParameters};
use crate::rollout::{family, play_policy, Environment, Episode, PolicyRollout, RolloutOptions};
use crate::seeds::{derived_rng, SeedStreams};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DualConvention {
    /// `mu` grows when the power budget is exceeded.
    #[default]
    ConstraintEnforcing,
    /// Signs exactly as printed: `mu` shrinks on violation and enters the
    /// primal objective with a plus sign.
    Literal,
}

impl DualConvention {
    /// Coefficient of `E[1^T p]` in the primal objective.
    pub fn power_weight(self, mu: f64) -> f64 {
        match self {
            DualConvention::ConstraintEnforcing => -mu,
            DualConvention::Literal => mu,
        }
    }

    fn dual_sign(self) -> f64 {
        match self {
            DualConvention::ConstraintEnforcing => 1.0,
            DualConvention::Literal => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CopyMode {
    /// Per-node stale copies refreshed on activation.
    #[default]
    Asynchronous,
    /// Every node always uses the central iterate.
    Synchronous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub step_size: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Time indices per rollout; at least the aggregation depth.
    pub rollout_len: usize,
    pub convention: DualConvention,
    pub copy_mode: CopyMode,
    /// Subtract a running mean of the sample weight (variance reduction).
    pub baseline: bool,
    pub baseline_decay: f64,
    /// Abort when the central parameter norm exceeds this.
    pub divergence_bound: f64,
    pub init_lambda: f64,
    pub init_mu: f64,
    /// Set `r` to the first batch's per-link estimate instead of starting at zero.
    pub warm_start_r: bool,
    /// Rescale the policy gradient to at most this Euclidean norm.
    pub grad_clip: Option<f64>,
    /// Step size at the last iteration as a fraction of `step_size`, reached
    /// by linear decay. `1.0` keeps the step constant.
    pub final_step_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-2,
            batch_size: 32,
            iterations: 1000,
            rollout_len: 5,
            convention: DualConvention::default(),
            copy_mode: CopyMode::default(),
            baseline: false,
            baseline_decay: 0.9,
            divergence_bound: 1e6,
            init_lambda: 1.0,
            init_mu: 0.0,
            warm_start_r: false,
            grad_clip: None,
            final_step_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, hops: usize) -> Result<()> {
        if !(self.step_size >= 0.0) {
            return Err(invalid_arg("step size must be nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(invalid_arg("batch size must be at least 1"));
        }
        if self.rollout_len < hops {
            return Err(invalid_arg(format!(
                "rollout length {} is shorter than the aggregation depth {hops}",
                self.rollout_len
            )));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(invalid_arg("baseline decay must lie in [0, 1)"));
        }
        if !(self.init_mu >= 0.0) {
            return Err(invalid_arg("initial mu must be nonnegative"));
        }
        if !(self.final_step_fraction > 0.0 && self.final_step_fraction <= 1.0) {
            return Err(invalid_arg("final step fraction must lie in (0, 1]"));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(invalid_arg("gradient clip must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualVariables {
    pub lambda: Array1<f64>,
    pub mu: f64,
}

impl DualVariables {
    pub fn new(m: usize, lambda: f64, mu: f64) -> Self {
        Self {
            lambda: Array1::from_elem(m, lambda),
            mu,
        }
    }
}

/// Central iterate plus the per-node stale copies.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCopyStore {
    pub central: PolicyParameters,
    pub copies: Vec<PolicyParameters>,
}

impl LocalCopyStore {
    pub fn new(central: PolicyParameters, m: usize) -> Self {
        Self {
            copies: vec![central.clone(); m],
            central,
        }
    }

    /// Refresh the copies of the nodes active at this iteration.
    pub fn update(&mut self, active: &[usize]) {
        for &i in active {
            self.copies[i].clone_from(&self.central);
        }
    }

    pub fn copy_refs(&self) -> Vec<&PolicyParameters> {
        self.copies.iter().collect()
    }
}

pub fn local_copy_update(mut store: LocalCopyStore, active: &[usize]) -> LocalCopyStore {
    store.update(active);
    store
}

/// Per-sample weight `lambda^T f + mu_s 1^T p`.
pub fn sample_weight(rollout: &PolicyRollout, duals: &DualVariables, convention: DualConvention) -> f64 {
    duals.lambda.dot(&rollout.f) + convention.power_weight(duals.mu) * rollout.total_power()
}

/// REINFORCE estimate of the gradient of
/// `lambda^T E[f] + mu_s E[1^T p]` with respect to the central parameters.
///
/// `copies[i]` must be the parameters node `i` used in every rollout. The
/// optional `baseline` is subtracted from each sample weight.
pub fn estimate_policy_gradient(
    copies: &[&PolicyParameters],
    rollouts: &[PolicyRollout],
    duals: &DualVariables,
    convention: DualConvention,
    baseline: f64,
) -> Result<Vec<f64>> {
    if rollouts.is_empty() {
        return Err(invalid_arg("gradient estimate needs a nonempty batch"));
    }
    let n = copies.first().map_or(0, |c| c.len());
    let mut grad = vec![0.0; n];
    for rollout in rollouts {
        if rollout.actions.len() != copies.len() {
            return Err(invalid_arg("rollout and copy counts differ"));
        }
        let w = sample_weight(rollout, duals, convention) - baseline;
        if w == 0.0 {
            continue;
        }
        for (action, params) in rollout.actions.iter().zip(copies) {
            if let Some(a) = action {
                params.accumulate_backward(&a.cache, w * score_logit(&a.decision, a.cache.q), &mut grad)?;
            }
        }
    }
    let scale = 1.0 / rollouts.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(grad)
}

/// Scale `g` down so its Euclidean norm is at most `limit`.
pub fn clip_norm(g: &mut [f64], limit: f64) {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > limit {
        let s = limit / norm;
        g.iter_mut().for_each(|v| *v *= s);
    }
}

/// Gradient ascent on `r` and the policy parameters.
pub fn primal_step(
    r: &mut Array1<f64>,
    params: &mut PolicyParameters,
    gradient: &[f64],
    duals: &DualVariables,
    step_size: f64,
) -> Result<()> {
    if r.len() != duals.lambda.len() {
        return Err(invalid_arg("r and lambda have different lengths"));
    }
    r.zip_mut_with(&duals.lambda, |ri, &li| *ri += step_size * (1.0 - li));
    params.axpy(step_size, gradient)
}

/// Projected dual descent. `r` is the value before this iteration's primal step.
pub fn dual_step(
    duals: &DualVariables,
    f_hat: &Array1<f64>,
    power_hat: f64,
    r: &Array1<f64>,
    p_max: f64,
    step_size: f64,
    convention: DualConvention,
) -> DualVariables {
    let lambda = &duals.lambda - &((f_hat - r) * step_size);
    let mu = (duals.mu + convention.dual_sign() * step_size * (power_hat - p_max)).max(0.0);
    DualVariables { lambda, mu }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    /// Batch mean of the sum capacity.
    pub capacity: f64,
    /// Batch mean of the total power.
    pub power: f64,
    pub lambda_norm: f64,
    pub mu: f64,
    pub param_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<IterationStats>,
}

impl TrainTrace {
    pub const CSV_HEADER: &'static str = "iteration,capacity,power,lambda_norm,mu,param_norm";

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.iteration, r.capacity, r.power, r.lambda_norm, r.mu, r.param_norm
            )?;
        }
        Ok(())
    }
}

/// Everything produced by one training iteration.
pub struct StepReport {
    pub stats: IterationStats,
    pub episodes: Vec<Episode>,
    pub rollouts: Vec<PolicyRollout>,
    /// Nodes whose copies were refreshed.
    pub refreshed: Vec<usize>,
}

/// Primal-dual trainer state.
pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub env: &'a Environment,
    pub opts: RolloutOptions,
    pub seeds: SeedStreams,
    pub store: LocalCopyStore,
    pub r: Array1<f64>,
    pub duals: DualVariables,
    pub iteration: usize,
    baseline: Option<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        cfg: TrainConfig,
        env: &'a Environment,
        opts: RolloutOptions,
        init: PolicyParameters,
        seeds: SeedStreams,
    ) -> Result<Self> {
        opts.validate()?;
        cfg.validate(opts.hops)?;
        if init.shape.hops != opts.hops {
            return Err(invalid_arg(format!(
                "policy expects K = {}, rollouts use K = {}",
                init.shape.hops, opts.hops
            )));
        }
        let m = env.m();
        Ok(Self {
            duals: DualVariables::new(m, cfg.init_lambda, cfg.init_mu),
            r: Array1::zeros(m),
            store: LocalCopyStore::new(init, m),
            cfg,
            env,
            opts,
            seeds,
            iteration: 0,
            baseline: None,
        })
    }

    pub fn params(&self) -> &PolicyParameters {
        &self.store.central
    }

    /// Step size used at iteration `tau`.
    pub fn step_size_at(&self, tau: usize) -> f64 {
        let frac = if self.cfg.iterations > 1 {
            (tau as f64 / (self.cfg.iterations - 1) as f64).min(1.0)
        } else {
            0.0
        };
        self.cfg.step_size * (1.0 - (1.0 - self.cfg.final_step_fraction) * frac)
    }

    pub fn step(&mut self) -> Result<StepReport> {
        let tau = self.iteration as u64;
        let m = self.env.m();
        let refreshed = match self.cfg.copy_mode {
            CopyMode::Asynchronous => {
                let mut rng = derived_rng(self.seeds.activation, &[family::TRAIN, tau, u64::MAX]);
                let active = self.env.activation.sample(&mut rng)?;
                self.store.update(&active);
                active
            }
            CopyMode::Synchronous => Vec::new(),
        };
        let copies: Vec<&PolicyParameters> = match self.cfg.copy_mode {
            CopyMode::Asynchronous => self.store.copy_refs(),
            CopyMode::Synchronous => vec![&self.store.central; m],
        };

        let env = self.env;
        let opts = &self.opts;
        let seeds = &self.seeds;
        let len = self.cfg.rollout_len;
        let batch: Vec<(Episode, PolicyRollout)> = (0..self.cfg.batch_size as u64)
            .into_par_iter()
            .map(|b| {
                let episode = env.seeded_episode(len, seeds, &[family::TRAIN, tau, b])?;
                let mut rng = derived_rng(seeds.policy, &[family::TRAIN, tau, b]);
                let rollout = play_policy(&episode, &copies, opts, &mut rng)?;
                Ok((episode, rollout))
            })
            .collect::<Result<_>>()?;
        let (episodes, rollouts): (Vec<_>, Vec<_>) = batch.into_iter().unzip();

        let n = rollouts.len() as f64;
        let mut f_hat = Array1::zeros(m);
        let mut power_hat = 0.0;
        let mut capacity = 0.0;
        for r in &rollouts {
            f_hat += &r.f;
            power_hat += r.total_power();
            capacity += r.sum_capacity();
        }
        f_hat /= n;
        power_hat /= n;
        capacity /= n;

        let baseline = if self.cfg.baseline {
            let mean_w = rollouts
                .iter()
                .map(|r| sample_weight(r, &self.duals, self.cfg.convention))
                .sum::<f64>()
                / n;
            let b = *self.baseline.get_or_insert(mean_w);
            self.baseline = Some(self.cfg.baseline_decay * b + (1.0 - self.cfg.baseline_decay) * mean_w);
            b
        } else {
            0.0
        };
        let mut grad = estimate_policy_gradient(&copies, &rollouts, &self.duals, self.cfg.convention, baseline)?;
        if let Some(limit) = self.cfg.grad_clip {
            clip_norm(&mut grad, limit);
        }
        drop(copies);

        if self.cfg.warm_start_r && self.iteration == 0 {
            self.r = f_hat.clone();
        }
        let eps = self.step_size_at(self.iteration);
        let r_prev = self.r.clone();
        primal_step(&mut self.r, &mut self.store.central, &grad, &self.duals, eps)?;
        self.duals = dual_step(
            &self.duals,
            &f_hat,
            power_hat,
            &r_prev,
            self.opts.p_max,
            eps,
            self.cfg.convention,
        );

        let norm = self.store.central.norm();
        if !norm.is_finite() || norm > self.cfg.divergence_bound {
            return Err(Error::Divergence {
                iteration: self.iteration,
                norm,
                bound: self.cfg.divergence_bound,
            });
        }
        let stats = IterationStats {
            iteration: self.iteration,
            capacity,
            power: power_hat,
            lambda_norm: self.duals.lambda.dot(&self.duals.lambda).sqrt(),
            mu: self.duals.mu,
            param_norm: norm,
        };
        self.iteration += 1;
        Ok(StepReport {
            stats,
            episodes,
            rollouts,
            refreshed,
        })
    }
}

/// Run `cfg.iterations` primal-dual iterations from `init`.
pub fn train_loop(
    cfg: TrainConfig,
    env: &Environment,
    opts: RolloutOptions,
    init: PolicyParameters,
    seeds: SeedStreams,
) -> Result<(PolicyParameters, TrainTrace)> {
    let iterations = cfg.iterations;
    let mut trainer = Trainer::new(cfg, env, opts, init, seeds)?;
    let mut trace = TrainTrace::default();
    for _ in 0..iterations {
        trace.rows.push(trainer.step()?.stats);
    }
    Ok((trainer.store.central, trace))
}
