//! Non-asymptotic normal-approximation error bounds for group sequential
//! maximum likelihood estimators, with Monte Carlo verification.
//!
//! The library evaluates smooth-function error bounds for the joint normal
//! approximation of repeatedly computed MLEs over accumulating data, both in
//! a generic Monte Carlo form and in closed or semi-closed form for
//! canonical exponential families, and checks them against simulation:
//! empirical smooth-function and Kolmogorov distances, order-of-decay
//! slopes, and an exchangeable-pair coupling diagnostic.
//!
//! Module map:
//! - [`model`] / [`families`]: parametric-model and exponential-family
//!   interfaces with moment oracles, plus the shipped families.
//! - [`design`]: analysis schedules, datasets, stacked vectors.
//! - [`estimator`]: repeated MLEs over data prefixes.
//! - [`blockmat`]: information matrices and the block-matrix algebra.
//! - [`bounds`]: the bound assemblies and the tail-parameter optimizer.
//! - [`montecarlo`]: reproducible simulation and every moment estimate the
//!   bounds consume.
//! - [`kolmogorov`]: smoothers, the smooth-to-Kolmogorov converter and the
//!   empirical Kolmogorov distance.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::type_complexity)]

pub mod blockmat;
pub mod bounds;
pub mod design;
pub mod error;
pub mod estimator;
pub mod families;
pub mod kolmogorov;
pub mod model;
pub mod montecarlo;
pub(crate) mod ratpoly;

pub use error::{Error, Result};
