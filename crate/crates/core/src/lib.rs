//! Empirical Bayes crash-hotspot estimation on simulated crash data.
//!
//! The crate covers the whole estimation pipeline:
//!
//! - [`sim`] draws Poisson-gamma crash datasets with known ground truth.
//! - [`nb_glm`] fits the negative binomial safety performance function.
//! - [`nn`] is a small dense-network engine with reverse-mode gradients and Adam.
//! - [`cgan`] builds and trains the conditional GAN used as a non-parametric prior.
//! - [`eb`] turns either prior into empirical Bayes estimates.
//! - [`screening`] and [`stats`] rank sites and score the rankings.

// `!(x > 0.0)` is the NaN-rejecting form used throughout input validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cgan;
pub mod eb;
pub mod error;
pub mod nb_glm;
pub mod nn;
pub mod rng;
pub mod screening;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
