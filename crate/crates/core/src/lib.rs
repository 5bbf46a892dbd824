//! Distributed particle-PHD filtering with arithmetic-average (AA) fusion.
//!
//! Every sensor of a simulated network runs a local PHD filter (particle-based
//! or Gaussian-mixture based). Particle filters summarize their posterior as a
//! small Gaussian mixture built from the measurement-wise weight decomposition,
//! the mixtures are disseminated by flooding or average consensus, and each
//! sensor maps the fused mixture back onto its particles by importance sampling
//! (or by sampling the mixture directly). Local cardinality estimates are
//! averaged in parallel and used to rescale the fused particle weights.
//!
//! Module map:
//!
//! - [`gaussian`], [`types`]: shared domain types and Gaussian primitives
//! - [`models`]: motion, birth, detection, likelihood and clutter models
//! - [`particle_phd`]: the local SMC-PHD filter
//! - [`gm_phd`]: the linear-Gaussian GM-PHD filter used by heterogeneous networks
//! - [`encode`] / [`decode`]: particle to mixture conversion and back
//! - [`fusion`]: flooding, Metropolis consensus, mixture merging
//! - [`netsim`]: topology, the synchronous round scheduler, cost and pipeline models
//! - [`metrics`]: OSPA and its network/time aggregates
//! - [`config`], [`experiment`]: scenario files and the Monte-Carlo driver

pub mod config;
pub mod decode;
pub mod encode;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod gaussian;
pub mod gm_phd;
pub mod metrics;
pub mod models;
pub mod netsim;
pub mod particle_phd;
pub mod rng;
pub mod topology;
pub mod types;

pub use error::{Error, Result};
pub use gaussian::{GaussianComponent, GmParameterSet, OriginTag};
pub use types::{Measurement, MeasurementKind, TargetState, WeightedParticleSet};
