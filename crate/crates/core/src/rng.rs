//! Counter-based keyed randomness.
//!
//! Every random quantity in the laboratory is a pure function of a key: the
//! environment at site `x` is `f(master_seed, x)`, the `i`-th visit to site
//! `x` reads `f(walk_key, x, i)`, the `i`-th offspring draw of generation `k`
//! reads `f(stream, k, i)`. Nothing is stored, so two-sided infinite
//! environments and exact re-runs come for free.

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold a sequence of words into one well-mixed key.
#[inline]
pub fn hash_words(words: &[u64]) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3_u64;
    for &w in words {
        h = mix64(h ^ mix64(w.wrapping_add(GOLDEN)));
    }
    h
}

#[inline]
pub fn hash2(a: u64, b: u64) -> u64 {
    mix64(mix64(a ^ 0x6A09_E667_F3BC_C908).wrapping_add(b).wrapping_mul(GOLDEN))
}

#[inline]
pub fn hash3(a: u64, b: u64, c: u64) -> u64 {
    hash2(hash2(a, b), c)
}

/// Map 64 random bits to a uniform in the open interval (0, 1).
#[inline]
pub fn unit_open(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Domain separators so that different consumers of the same seed never
/// collide.
pub mod domain {
    pub const SITE_P: u64 = 0x5349_5445_5f50;
    pub const SITE_M: u64 = 0x5349_5445_5f4d;
    pub const SITE_M_AUX: u64 = 0x5349_5445_5f41;
    pub const ENV: u64 = 0x454e_56;
    pub const WALK: u64 = 0x5741_4c4b;
    pub const BRANCH: u64 = 0x4252_4e43;
    pub const OFFSPRING_BLOCK: u64 = 0x4f46_4642;
    pub const COOKIE_DRAW: u64 = 0x434f_4f4b;
    pub const RETRY: u64 = 0x5245_5452;
}

/// Derive the seed of replica `index` from a master seed and a domain.
pub fn replica_seed(master_seed: u64, domain: u64, index: u64) -> u64 {
    hash3(master_seed, domain, index)
}

/// A counter-mode generator over a fixed key, usable wherever a
/// [`RngCore`] is required (e.g. `rand_distr` samplers).
#[derive(Clone, Debug)]
pub struct KeyedStream {
    key: u64,
    counter: u64,
}

impl KeyedStream {
    pub fn new(key: u64) -> Self {
        Self { key: mix64(key ^ 0xD134_2543_DE82_EF95), counter: 0 }
    }

    pub fn from_words(words: &[u64]) -> Self {
        Self::new(hash_words(words))
    }

    #[inline]
    pub fn next_unit(&mut self) -> f64 {
        unit_open(self.next_u64())
    }
}

impl RngCore for KeyedStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(GOLDEN);
        mix64(self.key ^ self.counter)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
