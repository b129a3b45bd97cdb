//! Deterministic RNG stream splitting.
//!
//! Every kernel step draws from a stream derived from
//! `(master seed, walker index, step index)` so that results are
//! independent of execution order and of how many walkers run alongside.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 round; the standard finalizer used to decorrelate seeds.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `(master, walker, step)` into a 32-byte ChaCha seed.
///
/// The stream for walker `i` at step `n` depends only on those three
/// values, so adding or removing other walkers never perturbs it.
pub fn walker_rng(master_seed: u64, walker: u64, step: u64) -> ChaCha8Rng {
    let mut state = master_seed;
    let _ = splitmix64(&mut state);
    state ^= walker.wrapping_mul(0xA076_1D64_78BD_642F);
    let _ = splitmix64(&mut state);
    state ^= step.wrapping_mul(0xE703_7ED1_A0B4_28DB);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Stream for events that belong to the run as a whole (initialization,
/// adaptation coins, batch draws) rather than to one walker. `label`
/// selects the sub-stream.
pub fn run_rng(master_seed: u64, label: u64) -> ChaCha8Rng {
    walker_rng(master_seed, u64::MAX ^ label, label)
}
