//! Named sub-streams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SCENE: &str = "scene";
pub const NOISE: &str = "noise";
pub const TRAIN: &str = "train";
pub const RANSAC: &str = "ransac";
pub const PERTURB: &str = "perturb";
pub const AUGMENT: &str = "augment";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the sub-stream `name` under `root`.
pub fn derive(root: u64, name: &str) -> u64 {
    // FNV-1a over the name, then mixed with the root.
    let h = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    splitmix64(root ^ splitmix64(h))
}

/// Seed for the `index`-th item of a stream.
pub fn indexed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ_and_repeat() {
        assert_ne!(derive(7, SCENE), derive(7, NOISE));
        assert_ne!(derive(7, SCENE), derive(8, SCENE));
        assert_eq!(derive(7, TRAIN), derive(7, TRAIN));
        assert_ne!(indexed(1, 0), indexed(1, 1));
    }
}
