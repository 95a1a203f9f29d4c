//! Numerical laboratory for U-turn based orbit selection on Gaussian targets.
//!
//! Targets are centered Gaussians whose covariance is diagonal and piecewise
//! constant ("scale blocks"). On such targets the U-turn diagnostic of the
//! No-U-Turn sampler concentrates around a closed-form curve, which makes the
//! orbit lengths NUTS selects predictable. The crate provides the target model,
//! exact and leapfrog flows, the diagnostic and its concentration bounds, the
//! NUTS transition, randomized HMC with the matching integration-time law, and
//! a set of Monte Carlo experiments built on top of those.
//!
//! Everything Monte Carlo runs through [`exec::map_tasks`], which is rayon
//! backed when the `parallel` feature is on (the default) and a plain loop
//! otherwise. Each task draws from its own counter-based substream
//! ([`rng::task_rng`]) so results do not depend on the worker count.

pub mod error;
pub mod exec;
pub mod flows;
pub mod gaussmodel;
pub mod hmc;
pub mod lab;
pub mod nuts;
pub mod rng;
pub mod stats;
pub mod uturn;

pub use error::{Error, Result};
pub use exec::Execution;
pub use flows::{FlowVariant, Grid, TimeStamp};
pub use gaussmodel::{Block, PhasePoint, ScaleBlockTarget, ShellSpec, TargetSpec};
pub use hmc::IntegrationTimeLaw;
pub use nuts::{OrbitParams, OrbitTrace, StopReason};
pub use uturn::IndexOrbit;
