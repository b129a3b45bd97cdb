//! Independent Metropolis-Hastings step.

use rand::Rng;

use crate::error::{Error, Result};
use crate::flows::Proposal;
use crate::targets::Target;

use super::{accept_with, ChainState, KernelTag, StepOutcome};

/// One step of the independent Metropolis-Hastings sampler: draw a
/// proposal from `proposal` (independent of the current state) and accept
/// with probability
/// `min{1, pi(x~) prop(x) / (pi(x) prop(x~))}`, computed in log space.
///
/// Errors when the proposal density vanishes at the current state: the
/// target's support must be contained in the proposal's support.
pub fn imh_step<R: Rng>(
    state: &ChainState,
    target: &Target,
    proposal: &dyn Proposal,
    rng: &mut R,
) -> Result<StepOutcome> {
    let candidate = proposal.sample(rng);
    let log_target_cand = target.log_density(&candidate);
    let log_prop_cand = proposal.log_prob(&candidate);
    let log_prop_cur = state.log_proposal;
    if log_prop_cur == f64::NEG_INFINITY {
        return Err(Error::ZeroProposalMass(format!(
            "current state (step {})",
            state.step
        )));
    }
    if log_prop_cur.is_nan() || log_prop_cand.is_nan() || log_target_cand.is_nan() {
        return Err(Error::NonFinite("imh acceptance ratio".into()));
    }
    // log [pi(cand) prop(cur) / (pi(cur) prop(cand))]
    let log_ratio = (log_target_cand - state.log_target) + (log_prop_cur - log_prop_cand);
    let (accepted, accept_prob) = accept_with(log_ratio, rng);
    let state = if accepted {
        ChainState {
            x: candidate.clone(),
            log_target: log_target_cand,
            log_proposal: log_prop_cand,
            step: state.step + 1,
        }
    } else {
        ChainState {
            step: state.step + 1,
            ..state.clone()
        }
    };
    Ok(StepOutcome {
        state,
        proposal: candidate,
        accept_prob,
        accepted,
        kernel: KernelTag::Imh,
    })
}
