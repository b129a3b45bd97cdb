//! Parallel walker sweeps with per-walker RNG streams.

use rayon::prelude::*;

use crate::error::Result;
use crate::rng::walker_rng;

use super::{ChainState, StepOutcome};

/// Advances every walker independently. Walker `i` draws from the stream
/// `walker_rng(master_seed, walker_ids[i], step_index)`, so the result is
/// independent of execution order and of how many walkers participate;
/// per-walker errors are reported without disturbing the others.
pub fn parallel_walkers_step<F>(
    states: &[ChainState],
    walker_ids: &[u64],
    master_seed: u64,
    step_index: u64,
    step_fn: F,
) -> Vec<Result<StepOutcome>>
where
    F: Fn(usize, &ChainState, &mut rand_chacha::ChaCha8Rng) -> Result<StepOutcome> + Sync,
{
    assert_eq!(states.len(), walker_ids.len(), "one id per walker");
    states
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = walker_rng(master_seed, walker_ids[i], step_index);
            step_fn(i, s, &mut rng)
        })
        .collect()
}
