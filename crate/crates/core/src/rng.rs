//! Counter-based random streams.
//!
//! Every stochastic draw in the toolkit comes from a ChaCha8 stream keyed by
//! a seed and a stream number derived from the draw's logical identity
//! (subject, stimulus, repetition, purpose). Results therefore do not depend
//! on evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed, e.g. one per simulated subject.
#[inline]
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// Packs a trial identity into a stream number.
#[inline]
pub fn trial_stream(purpose: u8, stimulus_id: i32, repetition: u32) -> u64 {
    ((purpose as u64) << 56) ^ ((stimulus_id as u32 as u64) << 24) ^ (repetition as u64 & 0xff_ffff)
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
