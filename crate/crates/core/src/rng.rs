//! Named random sub-streams derived from a single global seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Independent stream for component `name` (e.g. "world", "train", "eval", "noise").
pub fn substream(seed: u64, name: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// Stream keyed by a name and a tuple of indices, e.g. (corridor, direction, run).
pub fn indexed_stream(seed: u64, name: &str, index: &[u64]) -> Rng {
    let mut bytes = name.as_bytes().to_vec();
    for i in index {
        bytes.extend_from_slice(&i.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&bytes));
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = substream(3, "world").random();
        let b: u64 = substream(3, "world").random();
        let c: u64 = substream(3, "train").random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let x: u64 = indexed_stream(3, "eval", &[0, 1, 2]).random();
        let y: u64 = indexed_stream(3, "eval", &[0, 1, 3]).random();
        assert_ne!(x, y);
    }
}
