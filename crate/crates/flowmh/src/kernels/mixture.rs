//! Mixture transition kernel: with probability `alpha` take an
//! independent Metropolis-Hastings step from the flow proposal, otherwise
//! take a local MALA step.

use rand::Rng;

use crate::error::Result;
use crate::flows::Proposal;
use crate::targets::Target;

use super::{imh_step, mala_step, ChainState, KernelTag, StepOutcome};

/// One step of the IMH/MALA mixture kernel.
///
/// `alpha = 1` and `alpha = 0` short-circuit to the pure kernels without
/// consuming the branch coin, so they reproduce `imh_step` / `mala_step`
/// bit-for-bit under the same RNG stream. After an accepted local move the
/// cached proposal density is refreshed so subsequent IMH steps see a
/// valid cache.
pub fn mixture_kernel_step<R: Rng>(
    alpha: f64,
    state: &ChainState,
    target: &Target,
    proposal: &dyn Proposal,
    mala_step_size: f64,
    rng: &mut R,
) -> Result<StepOutcome> {
    debug_assert!((0.0..=1.0).contains(&alpha), "mixture probability");
    let take_imh = if alpha >= 1.0 {
        true
    } else if alpha <= 0.0 {
        false
    } else {
        rng.random::<f64>() < alpha
    };
    if take_imh {
        imh_step(state, target, proposal, rng)
    } else {
        let mut out = mala_step(state, target, mala_step_size, rng)?;
        if out.kernel == KernelTag::Mala && out.accepted {
            out.state.refresh_proposal_cache(proposal);
        }
        Ok(out)
    }
}
