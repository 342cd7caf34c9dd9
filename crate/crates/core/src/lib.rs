//! Simulation-based random utility choice models.
//!
//! The crate covers the numerical side of a random-utility neural choice
//! model: seeded error kernels, Cholesky-correlated stochastic utilities,
//! smoothed-argmax probability simulation over `Q` replications, simulated
//! maximum likelihood with Adam, closed-form baselines, synthetic data
//! generation and the equivalence statistics used to compare estimators.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. The `parallel` feature evaluates per-observation terms on a rayon
//! pool; reductions always run in a fixed order so results do not depend on
//! the thread count.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analysis;
pub mod baselines;
pub mod data;
pub mod distributions;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod simulator;
pub mod special;
pub mod synthdata;

mod par;

pub use error::{Error, Result};
