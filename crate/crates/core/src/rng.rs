//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose seed is
//! derived from a master seed and a list of integer keys (configuration hash,
//! replicate number, ...). A replicate's stream therefore depends only on its
//! keys, so replicates can run in any order or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha8 stream for `(seed, keys...)`.
pub fn keyed_stream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    let mut state = splitmix64(seed);
    for &k in keys {
        state = splitmix64(state ^ splitmix64(k.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    for chunk in bytes.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// FNV-1a hash of a string, used to key streams by configuration labels.
pub fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}
