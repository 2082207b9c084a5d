//! Per-sample random streams.
//!
//! Every sample gets its own generator seeded from the master seed and the
//! sample id, so results never depend on which worker handles a sample or in
//! what order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the little-endian bytes of `id`. Stable across platforms and
/// toolchains, unlike `std`'s default hasher.
pub fn stable_hash(id: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn sample_seed(master_seed: u64, sample_id: u64) -> u64 {
    splitmix64(master_seed ^ stable_hash(sample_id))
}

/// Seeded generator for one sample; remembers the seed for provenance.
#[derive(Debug, Clone)]
pub struct SampleRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SampleRng {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl RngCore for SampleRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}

pub fn derive_sample_rng(master_seed: u64, sample_id: u64) -> SampleRng {
    SampleRng::from_seed(sample_seed(master_seed, sample_id))
}
