//! Goal-proximity reward learning from constrained demonstrations.
//!
//! The crate is `no_std` (with `alloc`) and holds every algorithmic piece of
//! the pipeline: a small MLP kit with exact gradients, the grid and
//! point-mass environments, constrained expert generators, the proximity
//! ensemble, confidence-guided interpolation of proximity targets, PPO, the
//! behavioral-cloning baseline and the evaluation protocol. File formats,
//! configuration and the command line live in the `grip-harness` crate.
//!
//! All randomness flows through explicitly passed, seedable generators, so a
//! run is a pure function of its configuration and seed.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod envs;
pub mod error;
pub mod eval;
pub mod experts;
pub mod grip;
pub mod nnkit;
pub mod ppo;
pub mod proximity;
pub mod rng;

pub use error::{Error, Result};
