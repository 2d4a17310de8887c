use aggnn_core::aggregation::{aggregation_oracle, EffectiveAdjacency};
use aggnn_core::AggregationBuffer;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct History {
    h: Vec<Array2<f64>>,
    active: Vec<Vec<usize>>,
    x: Vec<Array1<f64>>,
}

fn random_history(m: usize, len: usize, seed: u64) -> History {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = Vec::new();
    let mut active = Vec::new();
    let mut x = Vec::new();
    for _ in 0..len {
        // mix of strong, weak and absent links so masking matters
        h.push(Array2::from_shape_fn((m, m), |_| match rng.random_range(0..4) {
            0 => 0.0,
            1 => rng.random_range(0.0..0.05),
            _ => rng.random_range(0.0..1.2),
        }));
        active.push((0..m).filter(|_| rng.random_bool(0.6)).collect());
        x.push(Array1::from_shape_fn(m, |_| rng.random_range(-1.0..2.0)));
    }
    History { h, active, x }
}

// Masked product written out independently of the library's adjacency builder.
fn masked(h: &Array2<f64>, active: &[usize], h_eps: f64) -> Array2<f64> {
    let m = h.nrows();
    Array2::from_shape_fn((m, m), |(i, j)| {
        if i != j && active.contains(&j) && h[[i, j]] >= h_eps {
            h[[i, j]]
        } else {
            0.0
        }
    })
}

fn direct_products(hist: &History, t: usize, hops: usize, h_eps: f64) -> Array2<f64> {
    let m = hist.x[0].len();
    let mut y = Array2::zeros((m, hops));
    for k in 0..hops {
        if k > t {
            break;
        }
        let mut v = hist.x[t - k].clone();
        // y^(k)(t) = H0(t) H0(t-1) ... H0(t-k+1) x(t-k): apply the oldest factor first
        for s in t + 1 - k..=t {
            v = masked(&hist.h[s], &hist.active[s], h_eps).dot(&v);
        }
        y.column_mut(k).assign(&v);
    }
    y
}

fn run_protocol(hist: &History, hops: usize, h_eps: f64) -> Vec<AggregationBuffer> {
    let m = hist.x[0].len();
    let mut buf = AggregationBuffer::zeros(m, hops);
    let mut out = Vec::new();
    for t in 0..hist.x.len() {
        let h0 = EffectiveAdjacency::build(&hist.h[t], &hist.active[t], h_eps, false);
        buf.advance(&h0, hist.x[t].view()).unwrap();
        out.push(buf.clone());
    }
    out
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn incremental_protocol_matches_products(m in 1usize..=6, hops in 1usize..=5, seed in any::<u64>(), h_eps in 0.0f64..0.3) {
        let hist = random_history(m, 50, seed);
        let bufs = run_protocol(&hist, hops, h_eps);
        for t in 0..50 {
            let direct = direct_products(&hist, t, hops, h_eps);
            prop_assert!(max_abs(&bufs[t].y, &direct) <= 1e-12, "t = {t}");
            let oracle = aggregation_oracle(&hist.h[..=t], &hist.active[..=t], &hist.x[..=t], hops, h_eps).unwrap();
            prop_assert!(max_abs(&bufs[t].y, &oracle.y) <= 1e-12, "t = {t}");
        }
    }

    #[test]
    fn never_active_node_is_invisible_to_others(m in 2usize..=6, hops in 2usize..=5, seed in any::<u64>(), silent in 0usize..6) {
        let silent = silent % m;
        let mut hist = random_history(m, 30, seed);
        for a in &mut hist.active {
            a.retain(|&j| j != silent);
        }
        let base = run_protocol(&hist, hops, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for x in &mut hist.x {
            x[silent] = rng.random_range(-50.0..50.0);
        }
        let changed = run_protocol(&hist, hops, 0.01);
        for (b, c) in base.iter().zip(&changed) {
            for i in (0..m).filter(|&i| i != silent) {
                prop_assert_eq!(b.sequence(i), c.sequence(i));
            }
        }
    }

    #[test]
    fn hop_k_only_sees_k_hop_neighborhood(hops in 2usize..=5, seed in any::<u64>()) {
        // path graph 0 - 1 - 2 - 3 - 4 - 5 with every node active
        let m = 6;
        let len = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h: Vec<Array2<f64>> = (0..len)
            .map(|_| Array2::from_shape_fn((m, m), |(i, j)| {
                if i.abs_diff(j) == 1 { rng.random_range(0.1..1.0) } else { 0.0 }
            }))
            .collect();
        let x: Vec<Array1<f64>> = (0..len).map(|_| Array1::from_shape_fn(m, |_| rng.random_range(0.0..1.0))).collect();
        let hist = History { h, active: vec![(0..m).collect(); len], x };
        let base = run_protocol(&hist, hops, 0.0);
        let mut far = History { h: hist.h.clone(), active: hist.active.clone(), x: hist.x.clone() };
        for x in &mut far.x {
            x[3] += 10.0;
        }
        let moved = run_protocol(&far, hops, 0.0);
        let last = len - 1;
        for k in 0..hops {
            // node 3 is three hops from node 0
            let unchanged = base[last].y[[0, k]] == moved[last].y[[0, k]];
            prop_assert_eq!(unchanged, k != 3, "k = {}", k);
        }
    }
}

#[test]
fn first_hop_by_hand() {
    let h = ndarray::array![[0.0, 0.5, 0.001], [0.2, 0.0, 0.3], [0.7, 0.4, 0.0]];
    let mut buf = AggregationBuffer::new(ndarray::array![1.0, 2.0, 3.0].view(), 2).unwrap();
    let h0 = EffectiveAdjacency::build(&h, &[0, 2], 0.01, false);
    buf.advance(&h0, ndarray::array![0.0, 0.0, 0.0].view()).unwrap();
    // link 2 -> 0 is below threshold and node 1 is inactive
    assert_eq!(buf.y.column(1).to_vec(), vec![0.0, 0.2 * 1.0 + 0.3 * 3.0, 0.7]);
}
