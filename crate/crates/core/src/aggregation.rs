//! Delayed multi-hop message passing.
//!
//! At every time index each active node forwards the first `K - 1` entries
//! of its previous aggregation sequence; every node (active or not) receives
//! from its active above-threshold neighbors and shifts the received sums one
//! hop deeper. Globally, column `k` of the buffer at time `t` is
//! `H0(t) H0(t-1) ... H0(t-k+1) x(t-k)`.

use std::io::{self, Write};

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{invalid_arg, Result};

/// Channel matrix masked by the neighborhood threshold and by the active
/// transmitter set.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveAdjacency {
    pub h0: Array2<f64>,
}

impl EffectiveAdjacency {
    /// `[H0]_{ij} = h_{ij}` when `h_{ij} >= h_eps`, `j` is active and
    /// (unless `self_loops`) `j != i`; zero otherwise. Rows of inactive nodes
    /// are kept: inactive nodes still listen.
    pub fn build(h: &Array2<f64>, active: &[usize], h_eps: f64, self_loops: bool) -> Self {
        let m = h.nrows();
        let mut is_active = vec![false; m];
        for &j in active {
            is_active[j] = true;
        }
        let mut h0 = Array2::zeros((m, m));
        for ((i, j), &v) in h.indexed_iter() {
            if is_active[j] && v >= h_eps && (self_loops || i != j) {
                h0[[i, j]] = v;
            }
        }
        Self { h0 }
    }

    pub fn m(&self) -> usize {
        self.h0.nrows()
    }

    /// Number of nonzero neighbors in row `i`.
    pub fn degree(&self, i: usize) -> usize {
        self.h0.row(i).iter().filter(|&&v| v != 0.0).count()
    }
}

pub fn effective_adjacency(h: &Array2<f64>, active: &[usize], h_eps: f64) -> EffectiveAdjacency {
    EffectiveAdjacency::build(h, active, h_eps, false)
}

/// Scalars exchanged in one slot: each active node sends `K - 1` values.
pub fn message_overhead(active_count: usize, hops: usize) -> usize {
    active_count * hops.saturating_sub(1)
}

/// Per-node aggregation sequences, one row per node, `K` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationBuffer {
    pub y: Array2<f64>,
}

impl AggregationBuffer {
    /// Buffer at `t = 0`: column 0 holds `x(0)`, deeper hops are zero.
    pub fn new(x0: ArrayView1<f64>, hops: usize) -> Result<Self> {
        if hops == 0 {
            return Err(invalid_arg("aggregation depth K must be at least 1"));
        }
        let mut y = Array2::zeros((x0.len(), hops));
        y.column_mut(0).assign(&x0);
        Ok(Self { y })
    }

    pub fn zeros(m: usize, hops: usize) -> Self {
        Self {
            y: Array2::zeros((m, hops)),
        }
    }

    pub fn hops(&self) -> usize {
        self.y.ncols()
    }

    pub fn m(&self) -> usize {
        self.y.nrows()
    }

    /// Aggregation sequence `y_i(t)` of node `i`.
    pub fn sequence(&self, i: usize) -> ArrayView1<'_, f64> {
        self.y.row(i)
    }

    /// Advance one time index in place.
    pub fn advance(&mut self, h0: &EffectiveAdjacency, x: ArrayView1<f64>) -> Result<()> {
        let m = self.m();
        if h0.m() != m || x.len() != m {
            return Err(invalid_arg(format!(
                "dimension mismatch: buffer has {m} nodes, adjacency {}, state {}",
                h0.m(),
                x.len()
            )));
        }
        let k_max = self.hops();
        // deepest hop first so each column reads the previous time's values
        for k in (1..k_max).rev() {
            let prev = self.y.column(k - 1).to_owned();
            for i in 0..m {
                let row = h0.h0.row(i);
                let mut acc = 0.0;
                for j in 0..m {
                    acc += row[j] * prev[j];
                }
                self.y[[i, k]] = acc;
            }
        }
        self.y.column_mut(0).assign(&x);
        Ok(())
    }

    /// Write `(t, node, hop, value)` rows for protocol debugging.
    pub fn write_snapshot_csv<W: Write>(&self, t: usize, header: bool, mut out: W) -> io::Result<()> {
        if header {
            writeln!(out, "t,node,hop,value")?;
        }
        for (i, row) in self.y.axis_iter(Axis(0)).enumerate() {
            for (k, v) in row.iter().enumerate() {
                writeln!(out, "{t},{i},{k},{v}")?;
            }
        }
        Ok(())
    }
}

/// One protocol step, returning the buffer at `t` from the buffer at `t - 1`.
pub fn aggregate_step(
    buffer: &AggregationBuffer,
    h0: &EffectiveAdjacency,
    x: ArrayView1<f64>,
) -> Result<AggregationBuffer> {
    let mut next = buffer.clone();
    next.advance(h0, x)?;
    Ok(next)
}

/// Direct evaluation of the aggregation sequences at the last time index of
/// the given histories by explicit matrix products. Independent of the
/// incremental protocol; intended as a test oracle.
pub fn aggregation_oracle(
    channels: &[Array2<f64>],
    activations: &[Vec<usize>],
    states: &[Array1<f64>],
    hops: usize,
    h_eps: f64,
) -> Result<AggregationBuffer> {
    let len = channels.len();
    if activations.len() != len || states.len() != len {
        return Err(invalid_arg("histories have different lengths"));
    }
    if hops == 0 {
        return Err(invalid_arg("aggregation depth K must be at least 1"));
    }
    if len == 0 {
        return Err(invalid_arg("empty history"));
    }
    let t = len - 1;
    let m = states[t].len();
    let mut y = Array2::zeros((m, hops));
    y.column_mut(0).assign(&states[t]);
    let mut product = Array2::<f64>::eye(m);
    // columns reaching before the first time index stay zero
    for k in 1..hops.min(len) {
        let h0 = effective_adjacency(&channels[t + 1 - k], &activations[t + 1 - k], h_eps);
        product = product.dot(&h0.h0);
        y.column_mut(k).assign(&product.dot(&states[t - k]));
    }
    Ok(AggregationBuffer { y })
}
