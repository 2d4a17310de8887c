//! Reference allocators: iteration-capped WMMSE, equal and random allocation.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};

/// Smallest value a WMMSE denominator may take.
pub const WMMSE_FLOOR: f64 = 1e-12;

/// Which interference terms a WMMSE node may use in its sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WmmseScope {
    Full,
    /// Only links with gain at least `h_eps` (plus the direct link).
    Neighborhood {
        h_eps: f64,
    },
}

impl WmmseScope {
    /// Squared amplitude gains visible to the iteration.
    pub fn visible_gains(&self, h: &Array2<f64>) -> Array2<f64> {
        match *self {
            WmmseScope::Full => h.clone(),
            WmmseScope::Neighborhood { h_eps } => {
                let mut g2 = h.clone();
                for ((i, j), v) in g2.indexed_iter_mut() {
                    if i != j && *v < h_eps {
                        *v = 0.0;
                    }
                }
                g2
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseState {
    /// Transmit amplitudes, `p_i = v_i^2`.
    pub v: Array1<f64>,
    pub u: Array1<f64>,
    pub w: Array1<f64>,
    pub iteration: usize,
    /// Times a denominator was raised to [`WMMSE_FLOOR`].
    pub floor_hits: usize,
}

impl WmmseState {
    /// Standard start, every amplitude at `sqrt(p0) / 2`.
    pub fn new(m: usize, p0: f64) -> Self {
        Self::from_amplitudes(Array1::from_elem(m, p0.sqrt() / 2.0))
    }

    pub fn from_amplitudes(v: Array1<f64>) -> Self {
        let m = v.len();
        Self {
            v,
            u: Array1::zeros(m),
            w: Array1::ones(m),
            iteration: 0,
            floor_hits: 0,
        }
    }

    fn floored(&mut self, d: f64) -> f64 {
        if d < WMMSE_FLOOR {
            self.floor_hits += 1;
            WMMSE_FLOOR
        } else {
            d
        }
    }

    /// One round of receiver (`u`), weight (`w`) and transmitter (`v`)
    /// updates on squared amplitude gains `g2 = h`. When `updating` is given
    /// only the flagged transmitters change their amplitude.
    pub fn iterate(&mut self, g2: &Array2<f64>, p0: f64, noise: f64, updating: Option<&[bool]>) {
        let m = self.v.len();
        let vmax = p0.sqrt();
        for i in 0..m {
            let gii = g2[[i, i]].sqrt();
            let rx_power: f64 = (0..m).map(|j| g2[[i, j]] * self.v[j] * self.v[j]).sum();
            self.u[i] = gii * self.v[i] / (noise + rx_power);
            let mse = self.floored(1.0 - self.u[i] * gii * self.v[i]);
            self.w[i] = 1.0 / mse;
        }
        let mut next = self.v.clone();
        for i in 0..m {
            if updating.is_some_and(|flags| !flags[i]) {
                continue;
            }
            let gii = g2[[i, i]].sqrt();
            let price: f64 = (0..m).map(|j| self.w[j] * self.u[j] * self.u[j] * g2[[j, i]]).sum();
            let price = self.floored(price);
            next[i] = (self.w[i] * self.u[i] * gii / price).clamp(0.0, vmax);
        }
        self.v = next;
        self.iteration += 1;
    }

    /// `p = v^2`. An amplitude clipped at `sqrt(p0)` squares to `p0` up to
    /// rounding, so the result is capped at `p0` exactly.
    pub fn powers(&self, p0: f64) -> Array1<f64> {
        self.v.mapv(|v| (v * v).min(p0))
    }
}

/// Run `k` WMMSE rounds from the standard start.
pub fn wmmse_run(h: &Array2<f64>, k: usize, p0: f64, noise: f64, scope: WmmseScope) -> Result<WmmseState> {
    check_wmmse_args(h, k, p0, noise)?;
    let g2 = scope.visible_gains(h);
    let mut state = WmmseState::new(h.nrows(), p0);
    for _ in 0..k {
        state.iterate(&g2, p0, noise, None);
    }
    Ok(state)
}

/// Power vector after `k` WMMSE rounds.
pub fn wmmse_k(h: &Array2<f64>, k: usize, p0: f64, noise: f64, scope: WmmseScope) -> Result<Array1<f64>> {
    wmmse_run(h, k, p0, noise, scope).map(|s| s.powers(p0))
}

pub(crate) fn check_wmmse_args(h: &Array2<f64>, k: usize, p0: f64, noise: f64) -> Result<()> {
    if k == 0 {
        return Err(invalid_arg("WMMSE needs at least one iteration"));
    }
    if h.nrows() != h.ncols() {
        return Err(invalid_arg("channel matrix must be square"));
    }
    if h.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(invalid_arg("channel gains must be finite and nonnegative"));
    }
    if !(p0 > 0.0) || !(noise > 0.0) {
        return Err(invalid_arg("p0 and noise power must be positive"));
    }
    Ok(())
}

pub fn equal_allocation(m: usize, p_max: f64) -> Result<Array1<f64>> {
    if m == 0 {
        return Err(invalid_arg("equal allocation needs m >= 1"));
    }
    Ok(Array1::from_elem(m, p_max / m as f64))
}

/// Per-node transmit probability `P_max / (p0 m)` of random allocation.
pub fn random_transmit_probability(m: usize, p0: f64, p_max: f64) -> Result<f64> {
    if m == 0 || !(p0 > 0.0) || !(p_max >= 0.0) {
        return Err(invalid_arg("random allocation needs m >= 1, p0 > 0, P_max >= 0"));
    }
    let prob = p_max / (p0 * m as f64);
    if prob > 1.0 {
        return Err(invalid_arg(format!(
            "transmit probability {prob} exceeds 1 (P_max = {p_max}, p0 = {p0}, m = {m})"
        )));
    }
    Ok(prob)
}

pub fn random_allocation<R: Rng + ?Sized>(m: usize, p0: f64, p_max: f64, rng: &mut R) -> Result<Array1<f64>> {
    let prob = random_transmit_probability(m, p0, p_max)?;
    Ok(Array1::from_iter((0..m).map(|_| {
        if rng.random::<f64>() < prob {
            p0
        } else {
            0.0
        }
    })))
}
