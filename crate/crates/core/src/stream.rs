//! Reproducible random sub-streams and stable digests.
//!
//! Every random quantity in a run is drawn from its own ChaCha8 stream whose
//! seed is a hash of `(master seed, purpose label, agent, iteration)`. Draws
//! therefore do not depend on evaluation order, and two runs that share a
//! master seed see identical noise, gamma and Byzantine draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Purpose labels for sub-stream derivation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Schedule,
    Noise,
    Gamma,
    Byzantine,
    Centerpoint,
    Initial,
    Run,
}

impl Purpose {
    fn tag(self) -> u64 {
        // fixed constants: changing them changes every recorded result
        match self {
            Purpose::Schedule => 0x5343_4845_4455_4c45,
            Purpose::Noise => 0x4e4f_4953_4500_0000,
            Purpose::Gamma => 0x4741_4d4d_4100_0000,
            Purpose::Byzantine => 0x4259_5a41_4e54_0000,
            Purpose::Centerpoint => 0x4345_4e54_4552_0000,
            Purpose::Initial => 0x494e_4954_0000_0000,
            Purpose::Run => 0x5255_4e00_0000_0000,
        }
    }
}

/// Seed for the sub-stream `(master, purpose, agent, t)`.
pub fn derive_seed(master: u64, purpose: Purpose, agent: u64, t: u64) -> u64 {
    let mut h = mix64(master);
    h = mix64(h ^ purpose.tag());
    h = mix64(h ^ agent);
    mix64(h ^ t.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

pub fn substream(master: u64, purpose: Purpose, agent: u64, t: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, purpose, agent, t))
}

/// 64-bit FNV-1a, for digests that must not change across toolchains.
#[derive(Clone, Debug)]
pub struct StableHasher(u64);

impl Default for StableHasher {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl StableHasher {
    pub fn write_bytes(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write_bytes(&v.to_le_bytes());
    }

    pub fn write_f64(&mut self, v: f64) {
        self.write_u64(v.to_bits());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}
