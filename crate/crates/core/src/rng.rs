//! Deterministic RNG stream derivation.
//!
//! All randomness in the crate flows from a single experiment seed.
//! Substreams are derived from `(seed, tag, indices...)` so that any part
//! of a run (one path, one training step, one metric seed) is a pure
//! function of the master seed, independent of execution order. This is
//! what makes checkpoint-resume and byte-identical reruns possible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Purpose tags for derived streams. Keeping them in one place avoids
/// accidental stream collisions between subsystems.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Data = 1,
    Init = 2,
    TrainStep = 3,
    Metrics = 4,
    Brownian = 5,
    Noise = 6,
}

/// splitmix64 finalizer: full-avalanche 64-bit mix.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent ChaCha stream from the master seed, a purpose
/// tag, and any number of indices (path id, round, step, ...).
pub fn stream(seed: u64, tag: Stream, indices: &[u64]) -> ChaCha12Rng {
    let mut state = mix64(seed ^ 0x6a09_e667_f3bc_c908);
    state = mix64(state ^ (tag as u64));
    state = mix64(state ^ indices.len() as u64);
    for &ix in indices {
        state = mix64(state ^ ix);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        state = mix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}
