//! Asynchronous activation: a fixed collection of active subsets, one of
//! which is drawn uniformly at every time index.

use std::io::{self, Write};

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationPatternSet {
    pub m: usize,
    /// Each pattern is a sorted list of node indices in `0..m`.
    pub patterns: Vec<Vec<usize>>,
}

impl ActivationPatternSet {
    pub fn new(m: usize, mut patterns: Vec<Vec<usize>>) -> Result<Self> {
        for p in &mut patterns {
            p.sort_unstable();
            p.dedup();
            if let Some(&bad) = p.iter().find(|&&i| i >= m) {
                return Err(invalid_arg(format!("pattern member {bad} outside 0..{m}")));
            }
        }
        Ok(Self { m, patterns })
    }

    /// A single pattern containing every node: the synchronous special case.
    pub fn all_active(m: usize) -> Self {
        Self {
            m,
            patterns: vec![(0..m).collect()],
        }
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn contains(&self, subset: &[usize]) -> bool {
        self.patterns.iter().any(|p| p == subset)
    }

    pub fn sample_active_set<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&[usize]> {
        if self.patterns.is_empty() {
            return Err(Error::InvalidState("activation pattern set is empty".into()));
        }
        let k = rng.random_range(0..self.patterns.len());
        Ok(&self.patterns[k])
    }

    /// Relabel nodes: node `i` of the result is node `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let inv = invert_permutation(perm);
        let patterns = self
            .patterns
            .iter()
            .map(|p| {
                let mut q: Vec<usize> = p.iter().map(|&old| inv[old]).collect();
                q.sort_unstable();
                q
            })
            .collect();
        Self { m: self.m, patterns }
    }
}

pub(crate) fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}

/// Build `n_act` patterns whose sizes are Poisson(`size_mean`) clipped to
/// `m`, members drawn uniformly without replacement.
pub fn build_pattern_sets<R: Rng + ?Sized>(
    m: usize,
    n_act: usize,
    size_mean: f64,
    rng: &mut R,
) -> Result<ActivationPatternSet> {
    if m == 0 || n_act == 0 {
        return Err(invalid_arg("pattern sets need m >= 1 and n_act >= 1"));
    }
    let poisson =
        Poisson::new(size_mean).map_err(|e| invalid_arg(format!("bad activation size mean {size_mean}: {e}")))?;
    let patterns = (0..n_act)
        .map(|_| {
            let size = (poisson.sample(rng) as usize).min(m);
            let mut members = index::sample(rng, m, size).into_vec();
            members.sort_unstable();
            members
        })
        .collect();
    Ok(ActivationPatternSet { m, patterns })
}

/// Runtime activation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ActivationModel {
    Patterns(ActivationPatternSet),
    /// Every node wakes independently with probability `prob` at each index.
    Bernoulli {
        m: usize,
        prob: f64,
    },
}

impl ActivationModel {
    pub fn m(&self) -> usize {
        match self {
            ActivationModel::Patterns(p) => p.m,
            ActivationModel::Bernoulli { m, .. } => *m,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<usize>> {
        match self {
            ActivationModel::Patterns(p) => p.sample_active_set(rng).map(<[usize]>::to_vec),
            ActivationModel::Bernoulli { m, prob } => {
                if !(0.0..=1.0).contains(prob) {
                    return Err(invalid_arg(format!("activation probability {prob} outside [0, 1]")));
                }
                Ok((0..*m).filter(|_| rng.random::<f64>() < *prob).collect())
            }
        }
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        match self {
            ActivationModel::Patterns(p) => ActivationModel::Patterns(p.permuted(perm)),
            other => other.clone(),
        }
    }
}

impl From<ActivationPatternSet> for ActivationModel {
    fn from(p: ActivationPatternSet) -> Self {
        ActivationModel::Patterns(p)
    }
}

/// Active sets recorded per time index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationTrace {
    pub active: Vec<Vec<usize>>,
}

impl ActivationTrace {
    pub fn push(&mut self, set: Vec<usize>) {
        self.active.push(set);
    }

    /// CSV with columns `t,active`, the second a `0`/`1` string indexed by node.
    pub fn write_csv<W: Write>(&self, m: usize, mut out: W) -> io::Result<()> {
        writeln!(out, "t,active")?;
        for (t, set) in self.active.iter().enumerate() {
            let mut mask = vec![b'0'; m];
            for &i in set {
                mask[i] = b'1';
            }
            writeln!(out, "{t},{}", String::from_utf8_lossy(&mask))?;
        }
        Ok(())
    }
}
