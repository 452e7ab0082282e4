//! Counter-based random streams.
//!
//! Every random draw in a run is addressed by `(run_seed, purpose,
//! replicate, step)`. The run seed and purpose select a ChaCha20 key, the
//! replicate selects the ChaCha stream, and the step selects a disjoint
//! block-counter window of 2^36 words. Draws therefore do not depend on
//! scheduling order. Gaussian variates come from the ziggurat sampler of
//! `rand_distr` 0.5 (`StandardNormal`); that method is part of the replay
//! contract and is pinned together with the crate version.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

const STEP_WINDOW_BITS: u32 = 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    ObservationNoise = 1,
    InitialEnsemble = 2,
    TruthPerturbation = 3,
    Sampling = 4,
    Battery = 5,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator positioned at the start of the window for `(purpose, replicate, step)`.
pub fn stream_rng(run_seed: u64, purpose: Purpose, replicate: u64, step: u64) -> ChaCha20Rng {
    let mut state = run_seed ^ (purpose as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha20Rng::from_seed(key);
    rng.set_stream(replicate);
    rng.set_word_pos(u128::from(step) << STEP_WINDOW_BITS);
    rng
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
