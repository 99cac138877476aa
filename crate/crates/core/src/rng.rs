//! Counter-based seed derivation.
//!
//! Every random stream is identified by a root seed plus a `(study, width,
//! index)` key, so a cell of a sweep draws the same numbers no matter which
//! other cells run or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit key for a stream.
pub fn stream_key(study: &str, width: u64, index: u64) -> u64 {
    // FNV-1a over the label, then mixed with the counters.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in study.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(splitmix(h ^ splitmix(width)) ^ index)
}

/// Seed for the stream `(study, width, index)` under `root`.
pub fn derive_seed(root: u64, study: &str, width: u64, index: u64) -> u64 {
    splitmix(root ^ stream_key(study, width, index))
}

/// Generator for the stream `(study, width, index)` under `root`.
pub fn stream(root: u64, study: &str, width: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream_key(study, width, index));
    rng
}
