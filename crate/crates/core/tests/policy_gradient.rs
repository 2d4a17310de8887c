use aggnn_core::async_sched::ActivationPatternSet;
use aggnn_core::metrics::link_capacity;
use aggnn_core::net_model::{ChannelConfig, NodeStateLaw, Point, Topology};
use aggnn_core::policy::{score_gradient, sigmoid, AllocationDecision};
use aggnn_core::rollout::{
    aggregate_episode, play_policy, probability_trace, NodeAction, PolicyRollout, RolloutOptions,
};
use aggnn_core::seeds::rng_from_seed;
use aggnn_core::trainer::{estimate_policy_gradient, DualConvention};
use aggnn_core::{DualVariables, Environment, PolicyParameters, PolicyShape, SeedStreams};
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

fn log_prob(params: &PolicyParameters, y: &Array1<f64>, transmit: bool) -> f64 {
    let q = params.forward(y.view()).unwrap().0;
    if transmit {
        q.ln()
    } else {
        (1.0 - q).ln()
    }
}

fn decision(q: f64, transmit: bool, p0: f64) -> AllocationDecision {
    AllocationDecision {
        q,
        p: if transmit { p0 } else { 0.0 },
        transmit,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn score_matches_central_differences(seed in any::<u64>(), bias in any::<bool>(), transmit in any::<bool>()) {
        let shape = PolicyShape { layers: 2, taps: 3, hops: 3, bias };
        let mut rng = rng_from_seed(seed);
        let mut params = PolicyParameters::init_uniform(shape, &mut rng).unwrap();
        for v in &mut params.theta {
            *v = 1.5 * *v + rng.random_range(-0.3..0.3);
        }
        let y = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..2.0));
        let (q, cache) = params.forward(y.view()).unwrap();
        // a pre-activation sitting on the ReLU kink has no derivative
        prop_assume!(cache.pre.iter().flatten().all(|z| z.abs() > 1e-3));
        let analytic = score_gradient(&cache, &decision(q, transmit, 2.0), &params).unwrap();
        let step = 1e-5;
        for n in 0..params.len() {
            let mut plus = params.clone();
            plus.theta[n] += step;
            let mut minus = params.clone();
            minus.theta[n] -= step;
            let fd = (log_prob(&plus, &y, transmit) - log_prob(&minus, &y, transmit)) / (2.0 * step);
            let scale = analytic[n].abs().max(fd.abs()).max(1e-2);
            prop_assert!((analytic[n] - fd).abs() <= 1e-4 * scale, "param {}: analytic {} fd {}", n, analytic[n], fd);
        }
    }
}

/// Parameters `[filter, layer bias, readout, readout bias]` of a 1-layer,
/// 1-tap, depth-1 policy: `logit = rho * relu(alpha * y + b) + c`.
fn tiny_logit_gradient(theta: &[f64], y: f64) -> (f64, [f64; 4]) {
    let (alpha, b, rho, c) = (theta[0], theta[1], theta[2], theta[3]);
    let z = alpha * y + b;
    let on = if z > 0.0 { 1.0 } else { 0.0 };
    let logit = rho * z.max(0.0) + c;
    (logit, [rho * y * on, rho * on, z.max(0.0), 1.0])
}

#[test]
fn two_node_reinforce_mean_equals_exact_gradient() {
    let shape = PolicyShape {
        layers: 1,
        taps: 1,
        hops: 1,
        bias: true,
    };
    let theta = vec![0.8, 0.1, -1.3, 0.4];
    let params = PolicyParameters::from_flat(shape, theta.clone()).unwrap();
    let ys = [0.7, 1.9];
    let h = array![[1.2, 0.3], [0.5, 0.9]];
    let p0 = 2.0;
    let duals = DualVariables {
        lambda: array![0.9, 1.4],
        mu: 0.2,
    };
    let convention = DualConvention::ConstraintEnforcing;
    let weight = |powers: &Array1<f64>| {
        let f = link_capacity(powers.view(), &h, 1.0).unwrap();
        duals.lambda.dot(&f) - duals.mu * powers.sum()
    };

    let hand: Vec<(f64, [f64; 4])> = ys.iter().map(|&y| tiny_logit_gradient(&theta, y)).collect();
    let qs: Vec<f64> = hand.iter().map(|(s, _)| sigmoid(*s)).collect();
    let mut exact = [0.0; 4];
    let mut reinforce = vec![0.0; 4];
    for mask in 0..4u8 {
        let a = [mask & 1 == 1, mask & 2 == 2];
        let probs: Vec<f64> = (0..2).map(|i| if a[i] { qs[i] } else { 1.0 - qs[i] }).collect();
        let prob = probs[0] * probs[1];
        let powers = Array1::from_iter(a.iter().map(|&t| if t { p0 } else { 0.0 }));
        let w = weight(&powers);
        // d/dtheta of pi_0 pi_1 with d pi_i = +/- q_i (1 - q_i) d logit_i
        for n in 0..4 {
            let mut d = 0.0;
            for i in 0..2 {
                let sign = if a[i] { 1.0 } else { -1.0 };
                d += sign * qs[i] * (1.0 - qs[i]) * hand[i].1[n] * probs[1 - i];
            }
            exact[n] += w * d;
        }
        let actions = (0..2)
            .map(|i| {
                let (q, cache) = params.forward(array![ys[i]].view()).unwrap();
                Some(NodeAction {
                    decision: decision(q, a[i], p0),
                    cache,
                    t: 0,
                })
            })
            .collect();
        let rollout = PolicyRollout {
            actions,
            f: link_capacity(powers.view(), &h, 1.0).unwrap(),
            powers,
            overhead: 0,
        };
        let g = estimate_policy_gradient(&[&params, &params], &[rollout], &duals, convention, 0.0).unwrap();
        for n in 0..4 {
            reinforce[n] += prob * g[n];
        }
    }
    for n in 0..4 {
        assert!(
            (reinforce[n] - exact[n]).abs() <= 1e-10,
            "param {n}: {} vs {}",
            reinforce[n],
            exact[n]
        );
    }
    assert!(exact.iter().any(|g| g.abs() > 1e-3));
}

fn toy_environment() -> Environment {
    let tx = vec![Point::new(0.0, 0.0), Point::new(1.5, 0.0), Point::new(0.0, 1.2)];
    let rx = vec![Point::new(0.4, 0.3), Point::new(1.2, 0.5), Point::new(0.5, 1.0)];
    let topology = Topology::new(tx, rx, vec![0, 1, 2]).unwrap();
    let channel = ChannelConfig {
        node_state_law: NodeStateLaw::DirectGain,
        ..Default::default()
    };
    Environment::new(topology, channel, ActivationPatternSet::all_active(3).into()).unwrap()
}

/// Objective averaged exactly over the final decisions of every episode.
fn smoothed_objective(
    params: &PolicyParameters,
    episodes: &[aggnn_core::Episode],
    opts: &RolloutOptions,
    duals: &DualVariables,
) -> f64 {
    let mut total = 0.0;
    for ep in episodes {
        let q = probability_trace(ep, params, opts).unwrap();
        let q = q.row(ep.len() - 1);
        let h: &Array2<f64> = &ep.last().sample.h;
        for mask in 0..8u8 {
            let mut prob = 1.0;
            let mut powers = Array1::zeros(3);
            for i in 0..3 {
                if mask >> i & 1 == 1 {
                    prob *= q[i];
                    powers[i] = opts.p0;
                } else {
                    prob *= 1.0 - q[i];
                }
            }
            let f = link_capacity(powers.view(), h, opts.noise_power).unwrap();
            total += prob * (duals.lambda.dot(&f) - duals.mu * powers.sum());
        }
    }
    total / episodes.len() as f64
}

fn nearest_kink(params: &PolicyParameters, episodes: &[aggnn_core::Episode], opts: &RolloutOptions) -> f64 {
    let mut nearest = f64::INFINITY;
    for ep in episodes {
        for buf in aggregate_episode(ep, opts).unwrap() {
            for i in 0..buf.m() {
                let (_, cache) = params.forward(buf.sequence(i)).unwrap();
                nearest = cache.pre.iter().flatten().fold(nearest, |a, z| a.min(z.abs()));
            }
        }
    }
    nearest
}

#[test]
fn estimator_tracks_smoothed_objective_slope() {
    let env = toy_environment();
    let opts = RolloutOptions {
        hops: 2,
        h_eps: 1e-3,
        self_loops: false,
        p0: 2.0,
        p_max: 3.0,
        noise_power: 1.0,
    };
    let shape = PolicyShape {
        layers: 2,
        taps: 3,
        hops: 2,
        bias: true,
    };
    let duals = DualVariables {
        lambda: array![1.0, 0.8, 1.2],
        mu: 0.1,
    };
    let seeds = SeedStreams::from_master(5);
    let episodes: Vec<_> = (0..8u64)
        .map(|e| env.seeded_episode(3, &seeds, &[e]).unwrap())
        .collect();
    let step = 1e-5;

    for param_seed in 1..=4 {
        let mut rng = rng_from_seed(param_seed);
        let mut params = PolicyParameters::init_uniform(shape, &mut rng).unwrap();
        // nonzero biases keep pre-activations off the ReLU kink
        for v in &mut params.theta {
            *v += rng.random_range(-0.3..0.3);
        }
        assert!(nearest_kink(&params, &episodes, &opts) > 10.0 * step);

        let fd: Vec<f64> = (0..params.len())
            .map(|n| {
                let mut plus = params.clone();
                plus.theta[n] += step;
                let mut minus = params.clone();
                minus.theta[n] -= step;
                (smoothed_objective(&plus, &episodes, &opts, &duals)
                    - smoothed_objective(&minus, &episodes, &opts, &duals))
                    / (2.0 * step)
            })
            .collect();

        let copies = vec![&params; 3];
        let mut rng = rng_from_seed(77);
        let rollouts: Vec<_> = (0..10_000)
            .map(|s| play_policy(&episodes[s % episodes.len()], &copies, &opts, &mut rng).unwrap())
            .collect();
        let est =
            estimate_policy_gradient(&copies, &rollouts, &duals, DualConvention::ConstraintEnforcing, 0.0).unwrap();

        let err = est.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(norm > 0.1);
        assert!(err <= 0.1 * norm, "params {param_seed}: relative error {}", err / norm);
    }
}
