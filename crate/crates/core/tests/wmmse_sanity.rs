use aggnn_core::baselines::{wmmse_k, WmmseScope, WmmseState};
use aggnn_core::metrics::link_capacity;
use aggnn_core::net_model::{generate_topology, sample_channel, ChannelConfig};
use aggnn_core::seeds::rng_from_seed;
use ndarray::{array, Array1, Array2};
use rand::Rng;

fn sum_rate(p: &Array1<f64>, h: &Array2<f64>) -> f64 {
    link_capacity(p.view(), h, 1.0).unwrap().sum()
}

fn random_channel(m: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from_seed(seed);
    Array2::from_shape_fn((m, m), |(i, j)| {
        if i == j {
            rng.random_range(0.5..3.0)
        } else {
            rng.random_range(0.0..1.5)
        }
    })
}

#[test]
fn single_link_uses_full_power() {
    for h in [0.05, 0.4, 1.0, 3.0] {
        let p = wmmse_k(&array![[h]], 50, 2.0, 1.0, WmmseScope::Full).unwrap();
        assert_eq!(p[0], 2.0, "h = {h}");
        assert_eq!(sum_rate(&p, &array![[h]]), (1.0 + 2.0 * h).log2());
    }
}

#[test]
fn sum_rate_never_decreases_over_rounds() {
    for seed in 0..20 {
        let h = random_channel(4, seed);
        let mut state = WmmseState::new(4, 2.0);
        let mut prev = sum_rate(&state.powers(2.0), &h);
        for round in 0..40 {
            state.iterate(&h, 2.0, 1.0, None);
            let now = sum_rate(&state.powers(2.0), &h);
            assert!(now >= prev - 1e-9, "instance {seed}, round {round}: {prev} -> {now}");
            prev = now;
        }
    }
}

#[test]
fn three_links_near_brute_force_optimum() {
    let levels = 81;
    let p0 = 2.0;
    for seed in 0..20 {
        // instances drawn from the network model itself
        let mut rng = rng_from_seed(seed);
        let topology = generate_topology(3, seed).unwrap();
        let h = sample_channel(&topology, &ChannelConfig::default(), &mut rng)
            .unwrap()
            .h;
        let mut best: f64 = 0.0;
        for a in 0..levels {
            for b in 0..levels {
                for c in 0..levels {
                    let p = Array1::from(vec![a, b, c]).mapv(|k| p0 * k as f64 / (levels - 1) as f64);
                    best = best.max(sum_rate(&p, &h));
                }
            }
        }
        let wmmse = sum_rate(&wmmse_k(&h, 200, p0, 1.0, WmmseScope::Full).unwrap(), &h);
        assert!(
            (wmmse - best).abs() <= 0.05 * best,
            "instance {seed}: WMMSE {wmmse}, grid {best}"
        );
    }
}
