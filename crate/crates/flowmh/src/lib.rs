//! # flowmh
//!
//! Adaptive independent Metropolis-Hastings (IMH) sampling with
//! normalizing-flow proposals, together with the baseline kernels,
//! adaptation rules, and diagnostics needed to study when such adaptive
//! samplers remain ergodic.
//!
//! The crate is organized around a few small pieces:
//!
//! - [`nn`]: dense layers with reverse-mode parameter gradients, enough to
//!   drive the coupling networks inside RealNVP flows.
//! - [`targets`]: the built-in target distributions (Brownian bridge,
//!   2D Gaussian mixture, Neal's funnel, 1D lattice field, 1D Gaussian).
//! - [`flows`]: proposal families — affine flows, RealNVP stacks, and
//!   mixtures with a fixed wide component.
//! - [`kernels`]: IMH, adaptive random walk Metropolis, MALA and its
//!   Hessian-preconditioned variant, kernel mixtures, parallel walker
//!   sweeps, and exact finite-state transition matrices.
//! - [`adapt`]: step-size/adaptation-probability schedules and the
//!   parameter-update rules (pseudo-likelihood ascent, reverse-KL descent,
//!   running Gaussian MLE, coin-flip adaptation).
//! - [`diagnostics`]: exact total-variation distances on finite chains,
//!   kernel distances, mixing times, two-sample KS statistics under random
//!   projections, effective sample sizes, mode weights, and a
//!   stationarity probe for adaptive chains.
//! - [`oracles`]: closed-form ground truth — the 1D Gaussian KL gradient
//!   flow, density-ratio bounds, Gaussian KL divergences, and the
//!   ball-kernel-density proposal analysis.
//!
//! Everything is seeded and deterministic: kernels draw randomness from
//! explicit RNG streams split by [`rng::walker_rng`], so runs reproduce
//! bit-for-bit and per-walker trajectories do not depend on how many other
//! walkers are present.

pub mod adapt;
pub mod diagnostics;
pub mod error;
pub mod flows;
pub mod kernels;
pub mod nn;
pub mod oracles;
pub mod rng;
pub mod targets;

pub use error::{Error, Result};
