//! Named, schedule-independent random streams.
//!
//! Every random draw in a run descends from `run_seed` through a stream key
//! built from a purpose string and integer ids, so the values a rollout sees
//! do not depend on thread count or evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a sequence of 64-bit words into one well-distributed key.
pub fn hash64(words: &[u64]) -> u64 {
    let mut acc = 0x243F_6A88_85A3_08D3u64;
    for &w in words {
        acc = splitmix64(acc ^ splitmix64(w));
    }
    acc
}

/// Stable 64-bit id for a purpose string (FNV-1a).
pub fn purpose_id(purpose: &str) -> u64 {
    purpose.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Key for a named child stream of `run_seed`.
pub fn stream_key(run_seed: u64, purpose: &str, ids: &[u64]) -> u64 {
    let mut words = Vec::with_capacity(ids.len() + 2);
    words.push(run_seed);
    words.push(purpose_id(purpose));
    words.extend_from_slice(ids);
    hash64(&words)
}

pub fn rng_from_key(key: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(key)
}

pub fn stream(run_seed: u64, purpose: &str, ids: &[u64]) -> StreamRng {
    rng_from_key(stream_key(run_seed, purpose, ids))
}
