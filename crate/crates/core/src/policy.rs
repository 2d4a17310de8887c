//! Shared single-feature 1-D convolutional policy.
//!
//! Every node runs the same network on its own length-`K` aggregation
//! sequence: `L` layers of zero-padded same-length filtering followed by
//! ReLU, a linear readout to a scalar logit and a sigmoid giving the
//! probability of transmitting at `p0`.
//!
//! Parameters live in one flat vector so that gradients, stale per-node
//! copies and the central iterate all share a coordinate space. Layout:
//! `[filters (L * taps)] [layer biases (L)]? [readout (K)] [readout bias]?`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::ArrayView1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};

/// Probabilities handed to the sampler are kept this far from 0 and 1.
pub const PROB_CLAMP: f64 = 1e-12;

const MODEL_MAGIC: &str = "aggnn-policy";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    /// Number of convolutional layers `L`.
    pub layers: usize,
    /// Filter length `K_l`, shared by all layers.
    pub taps: usize,
    /// Input length `K` (aggregation depth).
    pub hops: usize,
    #[serde(default)]
    pub bias: bool,
}

impl Default for PolicyShape {
    fn default() -> Self {
        Self {
            layers: 10,
            taps: 5,
            hops: 5,
            bias: false,
        }
    }
}

impl PolicyShape {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.taps == 0 || self.hops == 0 {
            return Err(invalid_arg(format!("degenerate policy shape {self:?}")));
        }
        Ok(())
    }

    fn filters_len(&self) -> usize {
        self.layers * self.taps
    }

    fn biases_offset(&self) -> usize {
        self.filters_len()
    }

    fn readout_offset(&self) -> usize {
        self.filters_len() + if self.bias { self.layers } else { 0 }
    }

    fn readout_bias_offset(&self) -> usize {
        self.readout_offset() + self.hops
    }

    /// Total parameter count; independent of the network size.
    pub fn param_count(&self) -> usize {
        self.readout_bias_offset() + usize::from(self.bias)
    }

    fn pad(&self) -> usize {
        (self.taps - 1) / 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParameters {
    pub shape: PolicyShape,
    pub theta: Vec<f64>,
}

impl PolicyParameters {
    pub fn zeros(shape: PolicyShape) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            shape,
            theta: vec![0.0; shape.param_count()],
        })
    }

    pub fn from_flat(shape: PolicyShape, theta: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if theta.len() != shape.param_count() {
            return Err(invalid_arg(format!(
                "{} parameters given, shape needs {}",
                theta.len(),
                shape.param_count()
            )));
        }
        Ok(Self { shape, theta })
    }

    /// Weights i.i.d. uniform in `[-c, c]`, `c = fan_in^{-1/2}`; biases zero.
    pub fn init_uniform<R: Rng + ?Sized>(shape: PolicyShape, rng: &mut R) -> Result<Self> {
        Self::init_scaled(shape, 1.0, rng)
    }

    /// Uniform weights in `[-c, c]` with `c = gain / sqrt(fan_in)`, biases zero.
    /// `gain = sqrt(6)` keeps activation variance roughly constant through ReLU layers.
    pub fn init_scaled<R: Rng + ?Sized>(shape: PolicyShape, gain: f64, rng: &mut R) -> Result<Self> {
        if !(gain > 0.0) || !gain.is_finite() {
            return Err(invalid_arg("init gain must be positive and finite"));
        }
        let mut p = Self::zeros(shape)?;
        let c_conv = gain * (shape.taps as f64).powf(-0.5);
        for w in &mut p.theta[..shape.filters_len()] {
            *w = rng.random_range(-c_conv..=c_conv);
        }
        let c_out = gain * (shape.hops as f64).powf(-0.5);
        let ro = shape.readout_offset();
        for w in &mut p.theta[ro..ro + shape.hops] {
            *w = rng.random_range(-c_out..=c_out);
        }
        Ok(p)
    }

    /// Filters start as the identity tap plus uniform noise in `[-noise, noise]`,
    /// so nonnegative inputs reach the readout through every ReLU layer.
    /// Readout weights follow the fan-in rule of [`Self::init_uniform`].
    pub fn init_near_identity<R: Rng + ?Sized>(shape: PolicyShape, noise: f64, rng: &mut R) -> Result<Self> {
        if !(noise >= 0.0) || !noise.is_finite() {
            return Err(invalid_arg("init noise must be finite and nonnegative"));
        }
        let mut p = Self::init_scaled(shape, 1.0, rng)?;
        let t = shape.taps;
        for l in 0..shape.layers {
            for j in 0..t {
                let base = if j == (t - 1) / 2 { 1.0 } else { 0.0 };
                p.theta[l * t + j] = base
                    + if noise > 0.0 {
                        rng.random_range(-noise..=noise)
                    } else {
                        0.0
                    };
            }
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn filter(&self, l: usize) -> &[f64] {
        let t = self.shape.taps;
        &self.theta[l * t..(l + 1) * t]
    }

    pub fn layer_bias(&self, l: usize) -> f64 {
        if self.shape.bias {
            self.theta[self.shape.biases_offset() + l]
        } else {
            0.0
        }
    }

    pub fn readout(&self) -> &[f64] {
        let o = self.shape.readout_offset();
        &self.theta[o..o + self.shape.hops]
    }

    pub fn readout_bias(&self) -> f64 {
        if self.shape.bias {
            self.theta[self.shape.readout_bias_offset()]
        } else {
            0.0
        }
    }

    pub fn norm(&self) -> f64 {
        self.theta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += alpha * direction`.
    pub fn axpy(&mut self, alpha: f64, direction: &[f64]) -> Result<()> {
        if direction.len() != self.theta.len() {
            return Err(invalid_arg("direction length differs from parameter count"));
        }
        for (t, d) in self.theta.iter_mut().zip(direction) {
            *t += alpha * d;
        }
        Ok(())
    }

    /// Run the network on one aggregation sequence.
    pub fn forward(&self, y: ArrayView1<f64>) -> Result<(f64, LayerCache)> {
        let shape = self.shape;
        if y.len() != shape.hops {
            return Err(invalid_arg(format!(
                "policy expects sequences of length {}, got {}",
                shape.hops,
                y.len()
            )));
        }
        let k = shape.hops;
        let pad = shape.pad() as isize;
        let mut activations = Vec::with_capacity(shape.layers + 1);
        let mut pre = Vec::with_capacity(shape.layers);
        activations.push(y.to_vec());
        for l in 0..shape.layers {
            let alpha = self.filter(l);
            let bias = self.layer_bias(l);
            let input = &activations[l];
            let z: Vec<f64> = (0..k)
                .map(|n| {
                    let mut acc = bias;
                    for (tap, &a) in alpha.iter().enumerate() {
                        let src = n as isize + tap as isize - pad;
                        if (0..k as isize).contains(&src) {
                            acc += a * input[src as usize];
                        }
                    }
                    acc
                })
                .collect();
            activations.push(z.iter().map(|&v| v.max(0.0)).collect());
            pre.push(z);
        }
        let last = &activations[shape.layers];
        let logit = self.readout_bias() + self.readout().iter().zip(last).map(|(w, v)| w * v).sum::<f64>();
        let q = sigmoid(logit);
        Ok((
            q,
            LayerCache {
                shape,
                activations,
                pre,
                logit,
                q,
            },
        ))
    }

    /// Backpropagate a logit sensitivity `dlogit` through a cached forward
    /// pass, adding `scale * d(logit)/d(theta) * dlogit` into `out`.
    pub fn accumulate_backward(&self, cache: &LayerCache, dlogit: f64, out: &mut [f64]) -> Result<()> {
        self.check_cache(cache)?;
        if out.len() != self.theta.len() {
            return Err(invalid_arg("gradient buffer length differs from parameter count"));
        }
        let shape = self.shape;
        let k = shape.hops;
        let pad = shape.pad() as isize;
        let ro = shape.readout_offset();
        let last = &cache.activations[shape.layers];
        for n in 0..k {
            out[ro + n] += dlogit * last[n];
        }
        if shape.bias {
            out[shape.readout_bias_offset()] += dlogit;
        }
        let mut dv: Vec<f64> = self.readout().iter().map(|w| w * dlogit).collect();
        for l in (0..shape.layers).rev() {
            let dz: Vec<f64> = dv
                .iter()
                .zip(&cache.pre[l])
                .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                .collect();
            let input = &cache.activations[l];
            let alpha = self.filter(l);
            let mut dprev = vec![0.0; k];
            for (n, &g) in dz.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for tap in 0..shape.taps {
                    let src = n as isize + tap as isize - pad;
                    if (0..k as isize).contains(&src) {
                        let s = src as usize;
                        out[l * shape.taps + tap] += g * input[s];
                        dprev[s] += g * alpha[tap];
                    }
                }
            }
            if shape.bias {
                out[shape.biases_offset() + l] += dz.iter().sum::<f64>();
            }
            dv = dprev;
        }
        Ok(())
    }

    fn check_cache(&self, cache: &LayerCache) -> Result<()> {
        let s = self.shape;
        if cache.shape != s
            || cache.activations.len() != s.layers + 1
            || cache.pre.len() != s.layers
            || cache.activations.iter().any(|a| a.len() != s.hops)
        {
            return Err(Error::InvalidState(
                "layer cache does not match the policy shape".into(),
            ));
        }
        Ok(())
    }

    /// Serialize to the versioned text model format.
    pub fn to_model_text(&self) -> String {
        let s = self.shape;
        let mut out = String::new();
        let _ = writeln!(out, "{MODEL_MAGIC} v{MODEL_VERSION}");
        let _ = writeln!(out, "layers {}", s.layers);
        let _ = writeln!(out, "taps {}", s.taps);
        let _ = writeln!(out, "hops {}", s.hops);
        let _ = writeln!(out, "bias {}", u8::from(s.bias));
        let _ = writeln!(out, "params {}", self.theta.len());
        for v in &self.theta {
            let _ = writeln!(out, "{v:e}");
        }
        out
    }

    pub fn from_model_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::ModelFormat(msg.to_string());
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| bad("empty model file"))?;
        let version = header
            .strip_prefix(MODEL_MAGIC)
            .and_then(|rest| rest.trim().strip_prefix('v'))
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| bad("missing model header"))?;
        if version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!("unsupported model version {version}")));
        }
        let mut field = |name: &str| -> Result<usize> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            line.strip_prefix(name)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::ModelFormat(format!("expected `{name} <n>`, found `{line}`")))
        };
        let layers = field("layers")?;
        let taps = field("taps")?;
        let hops = field("hops")?;
        let bias = match field("bias")? {
            0 => false,
            1 => true,
            _ => return Err(bad("bias flag must be 0 or 1")),
        };
        let count = field("params")?;
        let shape = PolicyShape {
            layers,
            taps,
            hops,
            bias,
        };
        let theta = lines
            .map(|l| {
                l.parse::<f64>()
                    .map_err(|_| Error::ModelFormat(format!("bad parameter value `{l}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if theta.len() != count {
            return Err(Error::ModelFormat(format!(
                "header announces {count} parameters, file has {}",
                theta.len()
            )));
        }
        Self::from_flat(shape, theta).map_err(|e| Error::ModelFormat(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.to_model_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::ModelFormat(format!("cannot read {}: {e}", path.display())))?;
        Self::from_model_text(&text)
    }
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    pub shape: PolicyShape,
    /// `v_0 .. v_L`, post-activation (with `v_0` the input).
    pub activations: Vec<Vec<f64>>,
    /// Pre-activation `z_1 .. z_L`.
    pub pre: Vec<Vec<f64>>,
    pub logit: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationDecision {
    /// Transmit probability, clamped into (0, 1).
    pub q: f64,
    /// Realized power, either 0 or `p0`.
    pub p: f64,
    pub transmit: bool,
}

pub fn sample_allocation<R: Rng + ?Sized>(q: f64, p0: f64, rng: &mut R) -> AllocationDecision {
    let q = q.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let transmit = rng.random::<f64>() < q;
    AllocationDecision {
        q,
        p: if transmit { p0 } else { 0.0 },
        transmit,
    }
}

/// Logit sensitivity of `log pi(decision)` for a Bernoulli(sigmoid(s)) policy.
pub fn score_logit(decision: &AllocationDecision, q: f64) -> f64 {
    f64::from(u8::from(decision.transmit)) - q
}

/// Gradient of `log pi(decision | y)` with respect to the flat parameters.
pub fn score_gradient(
    cache: &LayerCache,
    decision: &AllocationDecision,
    params: &PolicyParameters,
) -> Result<Vec<f64>> {
    if (decision.q - cache.q.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)).abs() > 0.0 {
        return Err(Error::InvalidState(
            "decision was not produced from this forward pass".into(),
        ));
    }
    let mut grad = vec![0.0; params.len()];
    params.accumulate_backward(cache, score_logit(decision, cache.q), &mut grad)?;
    Ok(grad)
}
