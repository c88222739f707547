//! Seed plumbing. Every random stream is derived from one root seed and a
//! fixed label, so subsystems never share a generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `label` under `root`. Stable across platforms and releases.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    // FNV-1a over the label, mixed with the root.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(root ^ splitmix(h))
}

/// Child seed for the `i`-th member of a family.
pub fn derive_indexed(root: u64, label: &str, i: u64) -> u64 {
    splitmix(derive_seed(root, label) ^ splitmix(i.wrapping_add(1)))
}

/// Stateless hash of integer coordinates into [0, 1).
pub fn hash01(seed: u64, a: i64, b: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((a as u64).wrapping_mul(0x9e37_79b9) ^ splitmix(b as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}
