//! Link performance, power accounting and Monte-Carlo reports.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};

pub use crate::rollout::{compare_methods, evaluate_policy};

/// Shannon rate of every link with interference treated as noise:
/// `f_i = log2(1 + p_i h_ii / (noise + sum_{j != i} p_j h_ij))`.
pub fn link_capacity(p: ArrayView1<f64>, h: &Array2<f64>, noise: f64) -> Result<Array1<f64>> {
    let m = p.len();
    if h.dim() != (m, m) {
        return Err(invalid_arg(format!(
            "power vector of length {m} does not match channel {:?}",
            h.dim()
        )));
    }
    if p.iter().any(|&v| !(v >= 0.0)) {
        return Err(invalid_arg("powers must be nonnegative"));
    }
    if !(noise > 0.0) {
        return Err(invalid_arg("noise power must be positive"));
    }
    Ok(Array1::from_iter((0..m).map(|i| {
        let mut interference = 0.0;
        for j in 0..m {
            if j != i {
                interference += p[j] * h[[i, j]];
            }
        }
        (1.0 + p[i] * h[[i, i]] / (noise + interference)).log2()
    })))
}

/// Running mean and standard error of a scalar.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MeanStderr {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self::default();
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, n }
    }
}

/// Monte-Carlo summary of an allocation method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    /// Mean per-link performance.
    pub f: Vec<f64>,
    pub sum_capacity: MeanStderr,
    pub total_power: MeanStderr,
    /// `P_max` minus the estimated mean total power.
    pub constraint_slack: f64,
    /// Per-sample sum capacities, in sample order.
    pub samples: Vec<f64>,
}

impl PerformanceReport {
    /// Aggregate per-sample link rates and power vectors.
    pub fn from_outcomes(f: &[Array1<f64>], powers: &[Array1<f64>], p_max: f64) -> Result<Self> {
        if f.is_empty() || f.len() != powers.len() {
            return Err(invalid_arg("a report needs at least one sample and matching lengths"));
        }
        let m = f[0].len();
        let mut mean_f = vec![0.0; m];
        for fi in f {
            for (acc, v) in mean_f.iter_mut().zip(fi) {
                *acc += v;
            }
        }
        for v in &mut mean_f {
            *v /= f.len() as f64;
        }
        let sums: Vec<f64> = f.iter().map(|fi| fi.sum()).collect();
        let power: Vec<f64> = powers.iter().map(|p| p.sum()).collect();
        let total_power = MeanStderr::from_samples(&power);
        Ok(Self {
            f: mean_f,
            sum_capacity: MeanStderr::from_samples(&sums),
            total_power,
            constraint_slack: p_max - total_power.mean,
            samples: sums,
        })
    }
}
