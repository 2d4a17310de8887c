//! Ad-hoc network geometry and the fading channel model.
//!
//! `[H]_{ij}` is the power gain from transmitter `j` to the receiver paired
//! with transmitter `i`: a distance pathloss `d^{-exponent}` times an
//! independent Rayleigh fast-fading factor, drawn fresh at every time index.

use std::io::{self, Write};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};
use crate::seeds::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub tx_pos: Vec<Point>,
    pub rx_pos: Vec<Point>,
    /// `pairing[i]` is the receiver index serving transmitter `i`.
    pub pairing: Vec<usize>,
}

impl Topology {
    pub fn new(tx_pos: Vec<Point>, rx_pos: Vec<Point>, pairing: Vec<usize>) -> Result<Self> {
        let t = Self {
            tx_pos,
            rx_pos,
            pairing,
        };
        t.validate()?;
        Ok(t)
    }

    /// Number of transmitters.
    pub fn m(&self) -> usize {
        self.tx_pos.len()
    }

    /// Number of receivers.
    pub fn n(&self) -> usize {
        self.rx_pos.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tx_pos.is_empty() {
            return Err(invalid_arg("topology has no transmitters"));
        }
        if self.n() > self.m() {
            return Err(invalid_arg(format!(
                "more receivers ({}) than transmitters ({})",
                self.n(),
                self.m()
            )));
        }
        if self.pairing.len() != self.m() {
            return Err(invalid_arg(format!(
                "pairing has {} entries for {} transmitters",
                self.pairing.len(),
                self.m()
            )));
        }
        if let Some(&r) = self.pairing.iter().find(|&&r| r >= self.n()) {
            return Err(invalid_arg(format!("pairing refers to receiver {r} of {}", self.n())));
        }
        let finite = |p: &Point| p.x.is_finite() && p.y.is_finite();
        if !self.tx_pos.iter().chain(&self.rx_pos).all(finite) {
            return Err(invalid_arg("non-finite node position"));
        }
        Ok(())
    }

    /// Deterministic pathloss matrix, `L[i][j] = |tx_j - rx_{r(i)}|^{-exponent}`.
    pub fn pathloss_matrix(&self, exponent: f64) -> Result<Array2<f64>> {
        self.validate()?;
        let m = self.m();
        let mut out = Array2::zeros((m, m));
        for i in 0..m {
            let rx = &self.rx_pos[self.pairing[i]];
            for j in 0..m {
                out[[i, j]] = pathloss_gain(&self.tx_pos[j], rx, exponent)?;
            }
        }
        Ok(out)
    }
}

/// Drop `m` transmitters uniformly in `[-m, m]^2`, each with its own receiver
/// uniformly in a square of half-width `m/4` around it.
pub fn generate_topology(m: usize, seed: u64) -> Result<Topology> {
    if m == 0 {
        return Err(invalid_arg("network needs at least one transmitter"));
    }
    let mut rng = rng_from_seed(seed);
    let side = m as f64;
    let offset = side / 4.0;
    let mut tx_pos = Vec::with_capacity(m);
    let mut rx_pos = Vec::with_capacity(m);
    for _ in 0..m {
        let a = Point::new(rng.random_range(-side..=side), rng.random_range(-side..=side));
        let b = Point::new(
            a.x + rng.random_range(-offset..=offset),
            a.y + rng.random_range(-offset..=offset),
        );
        tx_pos.push(a);
        rx_pos.push(b);
    }
    Topology::new(tx_pos, rx_pos, (0..m).collect())
}

pub fn pathloss_gain(a: &Point, b: &Point, exponent: f64) -> Result<f64> {
    let d = a.distance(b);
    if d == 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "coincident points ({}, {}) give an undefined pathloss",
            a.x, a.y
        )));
    }
    Ok(d.powf(-exponent))
}

/// Law of the per-node state `x_i(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NodeStateLaw {
    /// i.i.d. exponential with the given mean, independent of the channel.
    Exponential {
        mean: f64,
    },
    /// The node's own direct-link gain `x_i(t) = [H(t)]_{ii}`.
    DirectGain,
    Constant {
        value: f64,
    },
}

impl Default for NodeStateLaw {
    fn default() -> Self {
        NodeStateLaw::Exponential { mean: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub pathloss_exponent: f64,
    /// Rayleigh scale parameter (not the mean).
    pub fading_scale: f64,
    pub h_eps: f64,
    pub noise_power: f64,
    pub node_state_law: NodeStateLaw,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            pathloss_exponent: 2.2,
            fading_scale: 2.0,
            // About seven above-threshold interferers per node on the default
            // 25-node geometry.
            h_eps: 4e-3,
            noise_power: 1.0,
            node_state_law: NodeStateLaw::default(),
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pathloss_exponent > 0.0) {
            return Err(invalid_arg("pathloss exponent must be positive"));
        }
        if !(self.fading_scale > 0.0) {
            return Err(invalid_arg("fading scale must be positive"));
        }
        if !(self.h_eps >= 0.0) {
            return Err(invalid_arg("neighborhood threshold must be nonnegative"));
        }
        if !(self.noise_power > 0.0) {
            return Err(invalid_arg("noise power must be positive"));
        }
        match self.node_state_law {
            NodeStateLaw::Exponential { mean } if !(mean > 0.0) => {
                Err(invalid_arg("exponential node-state mean must be positive"))
            }
            NodeStateLaw::Constant { value } if !value.is_finite() => {
                Err(invalid_arg("constant node state must be finite"))
            }
            _ => Ok(()),
        }
    }
}

/// One time index worth of channel and node state.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub h: Array2<f64>,
    pub x: Array1<f64>,
}

impl ChannelSample {
    pub fn m(&self) -> usize {
        self.x.len()
    }
}

/// Rayleigh draw by inverse CDF: `scale * sqrt(-2 ln U)`, `U` in (0, 1].
pub fn rayleigh<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    scale * (-2.0 * u.ln()).sqrt()
}

pub fn sample_channel<R: Rng + ?Sized>(topology: &Topology, cfg: &ChannelConfig, rng: &mut R) -> Result<ChannelSample> {
    cfg.validate()?;
    let pathloss = topology.pathloss_matrix(cfg.pathloss_exponent)?;
    Ok(sample_channel_with_pathloss(&pathloss, cfg, rng))
}

/// Same as [`sample_channel`] for a precomputed pathloss matrix. Entries are
/// drawn row-major, then the node states.
pub fn sample_channel_with_pathloss<R: Rng + ?Sized>(
    pathloss: &Array2<f64>,
    cfg: &ChannelConfig,
    rng: &mut R,
) -> ChannelSample {
    let m = pathloss.nrows();
    let mut h = Array2::zeros((m, m));
    for ((i, j), &l) in pathloss.indexed_iter() {
        h[[i, j]] = l * rayleigh(cfg.fading_scale, rng);
    }
    let x = match cfg.node_state_law {
        NodeStateLaw::Exponential { mean } => {
            let exp = Exp::new(1.0 / mean).expect("validated mean");
            Array1::from_iter((0..m).map(|_| exp.sample(rng)))
        }
        NodeStateLaw::DirectGain => h.diag().to_owned(),
        NodeStateLaw::Constant { value } => Array1::from_elem(m, value),
    };
    ChannelSample { h, x }
}

/// Write a channel trace as CSV: one row per time index, `t` followed by the
/// row-major entries of `H(t)`.
pub fn write_channel_trace<W: Write>(samples: &[ChannelSample], mut out: W) -> io::Result<()> {
    let Some(first) = samples.first() else {
        return Ok(());
    };
    let m = first.m();
    write!(out, "t")?;
    for i in 0..m {
        for j in 0..m {
            write!(out, ",h_{i}_{j}")?;
        }
    }
    writeln!(out)?;
    for (t, s) in samples.iter().enumerate() {
        write!(out, "{t}")?;
        for v in s.h.iter() {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
