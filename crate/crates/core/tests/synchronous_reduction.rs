use aggnn_core::async_sched::ActivationPatternSet;
use aggnn_core::net_model::{generate_topology, ChannelConfig, NodeStateLaw};
use aggnn_core::rollout::{family, play_policy, RolloutOptions};
use aggnn_core::seeds::{derived_rng, rng_from_seed};
use aggnn_core::trainer::{estimate_policy_gradient, CopyMode, DualConvention, TrainConfig, Trainer};
use aggnn_core::{Environment, PolicyParameters, PolicyShape, SeedStreams};
use ndarray::Array1;

fn setup() -> (Environment, RolloutOptions, PolicyParameters) {
    let m = 5;
    let channel = ChannelConfig {
        node_state_law: NodeStateLaw::DirectGain,
        ..Default::default()
    };
    let env = Environment::new(
        generate_topology(m, 11).unwrap(),
        channel,
        ActivationPatternSet::all_active(m).into(),
    )
    .unwrap();
    let opts = RolloutOptions {
        hops: 3,
        h_eps: 4e-3,
        self_loops: false,
        p0: 2.0,
        p_max: 1.0,
        noise_power: 1.0,
    };
    let shape = PolicyShape {
        layers: 3,
        taps: 3,
        hops: 3,
        bias: true,
    };
    let init = PolicyParameters::init_near_identity(shape, 0.1, &mut rng_from_seed(2)).unwrap();
    (env, opts, init)
}

struct SyncState {
    params: PolicyParameters,
    r: Array1<f64>,
    lambda: Array1<f64>,
    mu: f64,
}

/// Plain synchronous primal-dual loop: one parameter vector used by every node.
fn synchronous_iteration(
    s: &mut SyncState,
    env: &Environment,
    opts: &RolloutOptions,
    seeds: &SeedStreams,
    cfg: &TrainConfig,
    tau: u64,
) -> (f64, f64) {
    let m = env.m();
    let copies = vec![&s.params; m];
    let rollouts: Vec<_> = (0..cfg.batch_size as u64)
        .map(|b| {
            let ep = env
                .seeded_episode(cfg.rollout_len, seeds, &[family::TRAIN, tau, b])
                .unwrap();
            play_policy(
                &ep,
                &copies,
                opts,
                &mut derived_rng(seeds.policy, &[family::TRAIN, tau, b]),
            )
            .unwrap()
        })
        .collect();
    let n = rollouts.len() as f64;
    let mut f_hat = Array1::<f64>::zeros(m);
    let mut power = 0.0;
    let mut capacity = 0.0;
    for r in &rollouts {
        f_hat += &r.f;
        power += r.total_power();
        capacity += r.sum_capacity();
    }
    f_hat /= n;
    power /= n;
    capacity /= n;
    let duals = aggnn_core::DualVariables {
        lambda: s.lambda.clone(),
        mu: s.mu,
    };
    let grad = estimate_policy_gradient(&copies, &rollouts, &duals, DualConvention::ConstraintEnforcing, 0.0).unwrap();
    drop(copies);

    let eps = cfg.step_size;
    let r_old = s.r.clone();
    for i in 0..m {
        s.r[i] += eps * (1.0 - s.lambda[i]);
    }
    for (t, g) in s.params.theta.iter_mut().zip(&grad) {
        *t += eps * g;
    }
    for i in 0..m {
        s.lambda[i] -= (f_hat[i] - r_old[i]) * eps;
    }
    s.mu = (s.mu + eps * (power - opts.p_max)).max(0.0);
    (capacity, power)
}

#[test]
fn all_active_trainer_is_bit_identical_to_synchronous_loop() {
    let (env, opts, init) = setup();
    let seeds = SeedStreams::from_master(99);
    let cfg = TrainConfig {
        step_size: 0.05,
        batch_size: 6,
        iterations: 25,
        rollout_len: 4,
        ..Default::default()
    };
    assert_eq!(cfg.copy_mode, CopyMode::Asynchronous);
    let mut trainer = Trainer::new(cfg.clone(), &env, opts, init.clone(), seeds).unwrap();
    let mut sync = SyncState {
        params: init,
        r: Array1::zeros(env.m()),
        lambda: Array1::from_elem(env.m(), cfg.init_lambda),
        mu: cfg.init_mu,
    };
    let mut mu_moved = false;
    for tau in 0..cfg.iterations as u64 {
        let used = trainer.params().clone();
        let report = trainer.step().unwrap();
        let (capacity, power) = synchronous_iteration(&mut sync, &env, &opts, &seeds, &cfg, tau);
        assert_eq!(report.stats.capacity.to_bits(), capacity.to_bits(), "iteration {tau}");
        assert_eq!(report.stats.power.to_bits(), power.to_bits());
        assert_eq!(trainer.params().theta, sync.params.theta, "iteration {tau}");
        assert_eq!(trainer.r, sync.r);
        assert_eq!(trainer.duals.lambda, sync.lambda);
        assert_eq!(trainer.duals.mu.to_bits(), sync.mu.to_bits());
        // every copy was refreshed to the iterate the rollouts used
        assert!(trainer.store.copies.iter().all(|c| *c == used));
        mu_moved |= sync.mu > 0.0;
    }
    assert!(mu_moved);
}

#[test]
fn synchronous_copy_mode_matches_all_active_asynchronous() {
    let (env, opts, init) = setup();
    let seeds = SeedStreams::from_master(7);
    let base = TrainConfig {
        step_size: 0.02,
        batch_size: 4,
        iterations: 10,
        rollout_len: 3,
        baseline: true,
        ..Default::default()
    };
    let mut a = Trainer::new(base.clone(), &env, opts, init.clone(), seeds).unwrap();
    let sync_cfg = TrainConfig {
        copy_mode: CopyMode::Synchronous,
        ..base
    };
    let mut b = Trainer::new(sync_cfg, &env, opts, init, seeds).unwrap();
    for _ in 0..10 {
        assert_eq!(a.step().unwrap().stats, b.step().unwrap().stats);
    }
    assert_eq!(a.params(), b.params());
}
