//! Seed derivation. Every random decision in the pipeline is drawn from a
//! ChaCha stream whose seed is a pure function of the global seed and a path
//! of labels, so components can be rerun independently.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix an integer label into a seed.
pub fn mix(seed: u64, label: u64) -> u64 {
    splitmix64(seed ^ splitmix64(label))
}

/// Mix a named label (e.g. `"env"`, `"train"`) into a seed.
pub fn substream(seed: u64, name: &str) -> u64 {
    // FNV-1a keeps the label hash stable across platforms and releases.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(seed, h)
}

pub fn stream(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

/// Common-random-number stream for one (user, round) cell of a rollout.
pub fn cell_stream(seed: u64, user_id: u64, round: usize) -> StreamRng {
    stream(mix(mix(seed, user_id), round as u64))
}
