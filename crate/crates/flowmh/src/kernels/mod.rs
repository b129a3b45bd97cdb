//! Transition kernels: independent Metropolis-Hastings, adaptive random
//! walk Metropolis, (preconditioned) MALA, kernel mixtures, parallel
//! walker sweeps, and exact finite-state kernel matrices.
//!
//! Kernel steps are pure functions of `(state, parameter snapshot, RNG
//! stream)`. Acceptance ratios are always computed in log space with a
//! `min{0, .}` clamp so that large energy scales never overflow.

mod discrete;
mod imh;
mod langevin;
mod mixture;
mod parallel;
mod rwm;

pub use discrete::{
    doeblin_bound, doeblin_bound_discrete, imh_discrete_kernel, tv_bound_product, DiscreteKernel,
    DiscreteProposal,
};
pub use imh::imh_step;
pub use langevin::{mala_step, precond_mala_step};
pub use mixture::mixture_kernel_step;
pub use parallel::parallel_walkers_step;
pub use rwm::{rwm_adaptive_step, RunningCov};

use crate::error::Result;
use crate::flows::Proposal;
use crate::targets::Target;

/// Which kernel produced a step. For kernel mixtures the tag records the
/// branch actually taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelTag {
    Imh,
    Rwm,
    Mala,
    PrecondMala,
}

impl std::fmt::Display for KernelTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            KernelTag::Imh => "imh",
            KernelTag::Rwm => "rwm",
            KernelTag::Mala => "mala",
            KernelTag::PrecondMala => "pmala",
        };
        f.write_str(s)
    }
}

/// Current point of one walker plus cached log-densities.
///
/// The caches must match recomputation; [`ChainState::refresh_proposal_cache`]
/// re-establishes the proposal cache after an adaptation event.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub log_target: f64,
    /// Cached proposal log-density at `x`; NaN when no independent
    /// proposal is in play (pure random-walk or Langevin chains).
    pub log_proposal: f64,
    pub step: usize,
}

impl ChainState {
    /// Builds a state and fills both caches.
    pub fn new(x: Vec<f64>, target: &Target, proposal: Option<&dyn Proposal>) -> ChainState {
        let log_target = target.log_density(&x);
        let log_proposal = proposal.map_or(f64::NAN, |p| p.log_prob(&x));
        ChainState {
            x,
            log_target,
            log_proposal,
            step: 0,
        }
    }

    /// Recomputes the cached proposal log-density (call after the
    /// proposal parameters change).
    pub fn refresh_proposal_cache(&mut self, proposal: &dyn Proposal) {
        self.log_proposal = proposal.log_prob(&self.x);
    }
}

/// Outcome of one kernel step. Rejected proposals are still recorded.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: ChainState,
    pub proposal: Vec<f64>,
    /// The acceptance probability that was used, in [0, 1].
    pub accept_prob: f64,
    pub accepted: bool,
    pub kernel: KernelTag,
}

/// Log-space Metropolis clamp: `min{0, log_ratio}` as a probability.
#[inline]
pub(crate) fn clamp_accept_prob(log_ratio: f64) -> f64 {
    log_ratio.min(0.0).exp()
}

/// Draws the accept/reject coin in log space.
#[inline]
pub(crate) fn accept_with<R: rand::Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> (bool, f64) {
    let p = clamp_accept_prob(log_ratio);
    if log_ratio >= 0.0 {
        // still consume one uniform so accept/reject paths use the same
        // amount of randomness
        let _: f64 = rng.random();
        (true, p)
    } else {
        let u: f64 = rng.random();
        (u.ln() < log_ratio, p)
    }
}

/// Convenience: builds the starting states for a set of walkers.
pub fn initial_states(
    points: &[Vec<f64>],
    target: &Target,
    proposal: Option<&dyn Proposal>,
) -> Result<Vec<ChainState>> {
    Ok(points
        .iter()
        .map(|p| ChainState::new(p.clone(), target, proposal))
        .collect())
}
