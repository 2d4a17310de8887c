//! Versioned experiment configuration (TOML).

use std::path::{Path, PathBuf};

use aggnn_core::async_sched::build_pattern_sets;
use aggnn_core::baselines::WmmseScope;
use aggnn_core::net_model::{generate_topology, ChannelConfig, NodeStateLaw};
use aggnn_core::policy::{PolicyParameters, PolicyShape};
use aggnn_core::rollout::{BaselineOptions, Environment, RolloutOptions};
use aggnn_core::seeds::{derive_seed, rng_from_seed, SeedStreams};
use aggnn_core::trainer::{CopyMode, DualConvention, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, IoContext, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Tag mixed into seeds of networks drawn for transfer evaluation.
const TRANSFER_TAG: u64 = 0x5452_414e_5346_4552;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub activation: ActivationConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub seeds: SeedConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            network: NetworkConfig::default(),
            activation: ActivationConfig::default(),
            policy: PolicyConfig::default(),
            training: TrainingConfig::default(),
            evaluation: EvaluationConfig::default(),
            seeds: SeedConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Transmitter-receiver pairs.
    pub m: usize,
    pub p0: f64,
    /// Total power budget; `m` when absent.
    pub p_max: Option<f64>,
    pub pathloss_exponent: f64,
    pub fading_scale: f64,
    pub h_eps: f64,
    pub noise_power: f64,
    pub node_state_law: NodeStateLaw,
    pub self_loops: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let ch = ChannelConfig::default();
        Self {
            m: 25,
            p0: 2.0,
            p_max: None,
            pathloss_exponent: ch.pathloss_exponent,
            fading_scale: ch.fading_scale,
            h_eps: ch.h_eps,
            noise_power: ch.noise_power,
            node_state_law: NodeStateLaw::DirectGain,
            self_loops: false,
        }
    }
}

impl NetworkConfig {
    pub fn channel(&self) -> ChannelConfig {
        ChannelConfig {
            pathloss_exponent: self.pathloss_exponent,
            fading_scale: self.fading_scale,
            h_eps: self.h_eps,
            noise_power: self.noise_power,
            node_state_law: self.node_state_law,
        }
    }

    /// Budget for a network of `m` pairs: the configured value for the
    /// configured size, `m` otherwise or when unset.
    pub fn p_max_for(&self, m: usize) -> f64 {
        match self.p_max {
            Some(p) if m == self.m => p,
            _ => m as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActivationConfig {
    /// Number of activation patterns.
    pub n_act: usize,
    /// Mean pattern size for the configured network size.
    pub size_mean: f64,
    /// Scale the mean pattern size with the network size when drawing
    /// networks of other sizes.
    pub scale_with_size: bool,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        Self {
            n_act: 5,
            size_mean: 12.0,
            scale_with_size: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitScheme {
    /// Uniform in `[-c, c]`, `c = fan_in^{-1/2}`.
    FanIn,
    /// Identity filters plus uniform noise of the given half-width.
    NearIdentity { noise: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub layers: usize,
    pub taps: usize,
    /// Aggregation depth `K`.
    pub hops: usize,
    pub bias: bool,
    pub init: InitScheme,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            layers: 10,
            taps: 5,
            hops: 5,
            bias: true,
            init: InitScheme::NearIdentity { noise: 0.1 },
        }
    }
}

impl PolicyConfig {
    pub fn shape(&self) -> PolicyShape {
        PolicyShape {
            layers: self.layers,
            taps: self.taps,
            hops: self.hops,
            bias: self.bias,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub step_size: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub rollout_len: usize,
    pub convention: DualConvention,
    pub copy_mode: CopyMode,
    pub baseline: bool,
    pub baseline_decay: f64,
    pub divergence_bound: f64,
    pub init_lambda: f64,
    pub init_mu: f64,
    pub warm_start_r: bool,
    pub grad_clip: Option<f64>,
    pub final_step_fraction: f64,
    /// Write a model checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            batch_size: 128,
            iterations: 3000,
            rollout_len: 5,
            convention: DualConvention::ConstraintEnforcing,
            copy_mode: CopyMode::Asynchronous,
            baseline: true,
            baseline_decay: 0.9,
            divergence_bound: 1e6,
            init_lambda: 1.0,
            init_mu: 0.0,
            warm_start_r: true,
            grad_clip: Some(1.0),
            final_step_fraction: 0.1,
            checkpoint_every: 500,
        }
    }
}

impl TrainingConfig {
    pub fn to_core(&self) -> TrainConfig {
        TrainConfig {
            step_size: self.step_size,
            batch_size: self.batch_size,
            iterations: self.iterations,
            rollout_len: self.rollout_len,
            convention: self.convention,
            copy_mode: self.copy_mode,
            baseline: self.baseline,
            baseline_decay: self.baseline_decay,
            divergence_bound: self.divergence_bound,
            init_lambda: self.init_lambda,
            init_mu: self.init_mu,
            warm_start_r: self.warm_start_r,
            grad_clip: self.grad_clip,
            final_step_fraction: self.final_step_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Monte-Carlo episodes per evaluation.
    pub samples: usize,
    pub wmmse_rounds: usize,
    /// Restrict WMMSE to above-threshold interference links.
    pub wmmse_neighborhood: bool,
    pub transfer_sizes: Vec<usize>,
    /// Fresh networks drawn per transfer size.
    pub transfer_redraws: usize,
    /// Episodes per transfer network.
    pub transfer_samples: usize,
    pub histogram_bins: usize,
    pub perm_trials: usize,
    /// Network size for the permutation test.
    pub perm_m: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            samples: 4000,
            wmmse_rounds: 5,
            wmmse_neighborhood: true,
            transfer_sizes: vec![25, 50, 75],
            transfer_redraws: 50,
            transfer_samples: 200,
            histogram_bins: 20,
            perm_trials: 100,
            perm_m: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub master: u64,
    pub topology: Option<u64>,
    pub fading: Option<u64>,
    pub activation: Option<u64>,
    pub policy: Option<u64>,
    pub init: Option<u64>,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self {
            master: 2021,
            topology: None,
            fading: None,
            activation: None,
            policy: None,
            init: None,
        }
    }
}

impl SeedConfig {
    pub fn streams(&self) -> SeedStreams {
        let base = SeedStreams::from_master(self.master);
        SeedStreams {
            topology: self.topology.unwrap_or(base.topology),
            fading: self.fading.unwrap_or(base.fading),
            activation: self.activation.unwrap_or(base.activation),
            policy: self.policy.unwrap_or(base.policy),
            init: self.init.unwrap_or(base.init),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path).at(path)?)
    }

    /// Load `path` (or the built-in defaults) and apply `key.path=value`
    /// overrides, where `value` is a TOML literal or a bare string.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).at(p)?,
            None => Self::default().to_toml()?,
        };
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let text = toml::to_string(&table).map_err(|e| config_err(e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(config_err(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let n = &self.network;
        if n.m == 0 {
            return Err(config_err("network.m must be at least 1"));
        }
        if self.activation.n_act == 0 || !(self.activation.size_mean > 0.0) {
            return Err(config_err("activation needs n_act >= 1 and size_mean > 0"));
        }
        if self.evaluation.samples == 0 || self.evaluation.transfer_samples == 0 {
            return Err(config_err("evaluation sample counts must be positive"));
        }
        if self.evaluation.histogram_bins == 0 {
            return Err(config_err("evaluation.histogram_bins must be positive"));
        }
        if self.evaluation.perm_m == 0 {
            return Err(config_err("evaluation.perm_m must be at least 1"));
        }
        if let InitScheme::NearIdentity { noise } = self.policy.init {
            if !(noise >= 0.0) {
                return Err(config_err("policy.init.noise must be nonnegative"));
            }
        }
        n.channel().validate()?;
        self.policy.shape().validate()?;
        self.rollout_options_for(n.m).validate()?;
        self.training.to_core().validate(self.policy.hops)?;
        if n.p_max_for(n.m) > n.p0 * n.m as f64 {
            return Err(config_err("P_max exceeds m * p0; random allocation is undefined"));
        }
        Ok(())
    }

    pub fn rollout_options_for(&self, m: usize) -> RolloutOptions {
        RolloutOptions {
            hops: self.policy.hops,
            h_eps: self.network.h_eps,
            self_loops: self.network.self_loops,
            p0: self.network.p0,
            p_max: self.network.p_max_for(m),
            noise_power: self.network.noise_power,
        }
    }

    pub fn rollout_options(&self) -> RolloutOptions {
        self.rollout_options_for(self.network.m)
    }

    pub fn baselines(&self) -> BaselineOptions {
        BaselineOptions {
            wmmse_rounds: self.evaluation.wmmse_rounds,
            wmmse_scope: if self.evaluation.wmmse_neighborhood {
                WmmseScope::Neighborhood {
                    h_eps: self.network.h_eps,
                }
            } else {
                WmmseScope::Full
            },
        }
    }

    /// The fixed training network.
    pub fn environment(&self) -> Result<Environment> {
        let s = self.seeds.streams();
        self.environment_from(self.network.m, s.topology, s.activation)
    }

    /// A network of `m` pairs with explicit topology and pattern seeds.
    pub fn environment_from(&self, m: usize, topology_seed: u64, pattern_seed: u64) -> Result<Environment> {
        let topology = generate_topology(m, topology_seed)?;
        let size_mean = if self.activation.scale_with_size {
            self.activation.size_mean * m as f64 / self.network.m as f64
        } else {
            self.activation.size_mean
        };
        let patterns = build_pattern_sets(m, self.activation.n_act, size_mean, &mut rng_from_seed(pattern_seed))?;
        Ok(Environment::new(topology, self.network.channel(), patterns.into())?)
    }

    /// Seed streams of the `redraw`-th fresh network of size `m`.
    pub fn transfer_streams(&self, m: usize, redraw: usize) -> SeedStreams {
        SeedStreams::from_master(derive_seed(self.seeds.master, &[TRANSFER_TAG, m as u64, redraw as u64]))
    }

    pub fn initial_policy(&self) -> Result<PolicyParameters> {
        let mut rng = rng_from_seed(self.seeds.streams().init);
        let shape = self.policy.shape();
        Ok(match self.policy.init {
            InitScheme::FanIn => PolicyParameters::init_uniform(shape, &mut rng)?,
            InitScheme::NearIdentity { noise } => PolicyParameters::init_near_identity(shape, noise, &mut rng)?,
        })
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{item}` is not of the form key=value")))?;
    let key = key.trim();
    let value = parse_literal(raw.trim());
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| config_err(format!("empty key in `{item}`")))?;
    let mut node = table;
    for part in parts {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("`{part}` in `{key}` is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn reference_parameters_are_the_defaults() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.network.m, 25);
        assert_eq!(cfg.network.p0, 2.0);
        assert_eq!(cfg.rollout_options().p_max, 25.0);
        assert_eq!((cfg.activation.n_act, cfg.activation.size_mean), (5, 12.0));
        assert_eq!((cfg.policy.layers, cfg.policy.taps, cfg.policy.hops), (10, 5, 5));
    }

    #[test]
    fn minimal_file_takes_defaults() {
        let cfg = ExperimentConfig::from_toml_str("version = 1\n[network]\nm = 10\n").unwrap();
        assert_eq!(cfg.network.m, 10);
        assert_eq!(cfg.rollout_options().p_max, 10.0);
        assert_eq!(cfg.training, TrainingConfig::default());
    }

    #[test]
    fn rejects_bad_files() {
        assert!(ExperimentConfig::from_toml_str("version = 2").is_err());
        assert!(ExperimentConfig::from_toml_str("version = 1\n[network]\nbogus = 1\n").is_err());
        let err = ExperimentConfig::from_toml_str("version = 1\n[network]\np_max = 100.0\n").unwrap_err();
        assert_eq!(err.category(), "invalid-config");
        let err = ExperimentConfig::from_toml_str("version = 1\n[training]\nrollout_len = 2\n").unwrap_err();
        assert_eq!(err.category(), "invalid-argument");
    }

    #[test]
    fn overrides_apply_typed_values() {
        let cfg = ExperimentConfig::load_with_overrides(
            None,
            &[
                "training.iterations=7".into(),
                "network.node_state_law.kind=exponential".into(),
                "network.node_state_law.mean=2.0".into(),
                "output.dir=somewhere".into(),
                "evaluation.transfer_sizes=[25, 30]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.training.iterations, 7);
        assert_eq!(cfg.network.node_state_law, NodeStateLaw::Exponential { mean: 2.0 });
        assert_eq!(cfg.output.dir, PathBuf::from("somewhere"));
        assert_eq!(cfg.evaluation.transfer_sizes, vec![25, 30]);
        assert!(ExperimentConfig::load_with_overrides(None, &["nonsense".into()]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.training.iterations += 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn seed_overrides_replace_single_streams() {
        let s = SeedConfig {
            fading: Some(5),
            ..Default::default()
        };
        let base = SeedStreams::from_master(2021);
        let got = s.streams();
        assert_eq!(got.fading, 5);
        assert_eq!(got.topology, base.topology);
    }

    #[test]
    fn transfer_networks_scale_activity() {
        let cfg = ExperimentConfig::default();
        let s = cfg.transfer_streams(50, 0);
        let env = cfg.environment_from(50, s.topology, s.activation).unwrap();
        assert_eq!(env.m(), 50);
        assert_eq!(cfg.rollout_options_for(50).p_max, 50.0);
        assert_ne!(cfg.transfer_streams(50, 0), cfg.transfer_streams(50, 1));
    }
}
