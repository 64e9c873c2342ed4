//! Seeded random state.
//!
//! The generator is ChaCha8 (`rand_chacha`), which produces the same stream on
//! every platform for a given seed. Independent sub-streams are derived by
//! mixing the seed with a path of integers through SplitMix64, so work that is
//! split across samples or epochs never depends on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const ALGORITHM: &str = "chacha8";

#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        ALGORITHM
    }

    /// A fresh stream keyed by `path` under this state's seed.
    pub fn derive(&self, path: &[u64]) -> RngState {
        RngState::new(derive_seed(self.seed, path))
    }
}

impl rand::RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Stable 64-bit FNV-1a hash, used for hash-based splits.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_same_stream() {
        let mut a = RngState::new(42);
        let mut b = RngState::new(42);
        let xs: Vec<u64> = (0..16).map(|_| a.gen()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.gen()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn chacha8_stream_is_pinned() {
        // Frozen first draw; guards against silent algorithm changes.
        let mut r = RngState::new(0);
        let first = r.next_u64_for_test();
        assert_eq!(first, 13_080_132_717_333_068_652);
        assert_eq!(r.algorithm(), "chacha8");
    }

    #[test]
    fn derived_streams_differ() {
        let root = RngState::new(7);
        let mut a = root.derive(&[0, 1]);
        let mut b = root.derive(&[1, 0]);
        assert_ne!(a.gen::<u64>(), b.gen::<u64>());
        assert_eq!(derive_seed(7, &[3]), derive_seed(7, &[3]));
    }

    impl RngState {
        fn next_u64_for_test(&mut self) -> u64 {
            rand::RngCore::next_u64(self)
        }
    }
}
