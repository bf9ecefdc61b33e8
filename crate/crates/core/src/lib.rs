//! Probabilistic wind-farm power prediction.
//!
//! The library models normalised turbine power with a beta likelihood whose
//! mean and precision are linked to B-spline expansions of farm-level wind
//! features. Four pooling structures are provided (independent per-turbine
//! fits, a single shared fit, a partially-pooled hierarchy, and a spatial
//! metamodel that maps turbine coordinates to regression coefficients), all
//! sampled with the built-in No-U-Turn sampler.
//!
//! Supporting subsystems: a SCADA cleaning pipeline, a synthetic wind farm
//! with directional wake deficits for ground-truth experiments, and NMSE/JLL
//! scoring.

pub mod beta;
pub mod draws;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nuts;
pub mod scada;
pub mod special;
pub mod splines;
pub mod synthfarm;

pub use error::{Error, Result};
