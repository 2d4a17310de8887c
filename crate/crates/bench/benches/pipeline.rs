use aggnn_core::aggregation::EffectiveAdjacency;
use aggnn_core::async_sched::build_pattern_sets;
use aggnn_core::baselines::{wmmse_k, WmmseScope};
use aggnn_core::net_model::{generate_topology, ChannelConfig, NodeStateLaw};
use aggnn_core::rollout::{play_policy, RolloutOptions};
use aggnn_core::seeds::rng_from_seed;
use aggnn_core::trainer::{TrainConfig, Trainer};
use aggnn_core::{AggregationBuffer, Environment, PolicyParameters, PolicyShape, SeedStreams};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn environment(m: usize) -> Environment {
    let patterns = build_pattern_sets(m, 5, 12.0 * m as f64 / 25.0, &mut rng_from_seed(3)).unwrap();
    let channel = ChannelConfig {
        node_state_law: NodeStateLaw::DirectGain,
        ..Default::default()
    };
    Environment::new(generate_topology(m, 1).unwrap(), channel, patterns.into()).unwrap()
}

fn opts(m: usize) -> RolloutOptions {
    RolloutOptions {
        hops: 5,
        h_eps: 4e-3,
        self_loops: false,
        p0: 2.0,
        p_max: m as f64,
        noise_power: 1.0,
    }
}

fn policy() -> PolicyParameters {
    let shape = PolicyShape {
        layers: 10,
        taps: 5,
        hops: 5,
        bias: true,
    };
    PolicyParameters::init_near_identity(shape, 0.1, &mut rng_from_seed(0)).unwrap()
}

fn aggregation(c: &mut Criterion) {
    let env = environment(25);
    let ep = env.seeded_episode(1, &SeedStreams::default(), &[0]).unwrap();
    let step = &ep.steps[0];
    let h0 = EffectiveAdjacency::build(&step.sample.h, &step.active, 4e-3, false);
    let mut buf = AggregationBuffer::zeros(25, 5);
    c.bench_function("aggregation_advance_m25_k5", |b| {
        b.iter(|| buf.advance(black_box(&h0), step.sample.x.view()).unwrap())
    });
}

fn rollout(c: &mut Criterion) {
    let params = policy();
    let mut group = c.benchmark_group("policy_rollout");
    for m in [25, 50, 75] {
        let env = environment(m);
        let ep = env.seeded_episode(5, &SeedStreams::default(), &[0]).unwrap();
        let copies = vec![&params; m];
        let mut rng = rng_from_seed(1);
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, &m| {
            b.iter(|| play_policy(black_box(&ep), &copies, &opts(m), &mut rng).unwrap())
        });
    }
    group.finish();
}

fn wmmse(c: &mut Criterion) {
    let env = environment(25);
    let ep = env.seeded_episode(1, &SeedStreams::default(), &[0]).unwrap();
    let h = &ep.steps[0].sample.h;
    c.bench_function("wmmse_m25_100_rounds", |b| {
        b.iter(|| wmmse_k(black_box(h), 100, 2.0, 1.0, WmmseScope::Full).unwrap())
    });
}

fn training_step(c: &mut Criterion) {
    let env = environment(25);
    let cfg = TrainConfig {
        batch_size: 32,
        iterations: usize::MAX,
        ..Default::default()
    };
    let mut trainer = Trainer::new(cfg, &env, opts(25), policy(), SeedStreams::default()).unwrap();
    c.bench_function("train_step_m25_b32", |b| b.iter(|| trainer.step().unwrap().stats));
}

criterion_group!(benches, aggregation, rollout, wmmse, training_step);
criterion_main!(benches);
