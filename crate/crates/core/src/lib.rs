//! Decentralized, asynchronous wireless power control with aggregation
//! graph neural networks.
//!
//! The crate is organized bottom-up:
//!
//! - [`net_model`] draws ad-hoc topologies and fading channel samples.
//! - [`async_sched`] builds activation pattern sets and samples active sets.
//! - [`aggregation`] runs the delayed multi-hop message passing that builds
//!   each node's aggregation sequence.
//! - [`policy`] is the shared 1-D convolutional policy with its score-function
//!   gradient.
//! - [`rollout`] plays a policy (or a baseline) over sampled episodes with
//!   hold-when-inactive semantics.
//! - [`trainer`] is the offline primal-dual trainer with stale per-node copies.
//! - [`baselines`] holds WMMSE, equal and random allocation.
//! - [`metrics`] computes link capacities and Monte-Carlo performance reports.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod async_sched;
pub mod baselines;
pub mod error;
pub mod metrics;
pub mod net_model;
pub mod policy;
pub mod rollout;
pub mod seeds;
pub mod trainer;

pub use aggregation::{AggregationBuffer, EffectiveAdjacency};
pub use async_sched::{ActivationModel, ActivationPatternSet, ActivationTrace};
pub use error::{Error, Result};
pub use metrics::PerformanceReport;
pub use net_model::{ChannelConfig, ChannelSample, NodeStateLaw, Point, Topology};
pub use policy::{AllocationDecision, LayerCache, PolicyParameters, PolicyShape};
pub use rollout::{Environment, Episode};
pub use seeds::SeedStreams;
pub use trainer::{DualVariables, LocalCopyStore, TrainConfig, TrainTrace};
