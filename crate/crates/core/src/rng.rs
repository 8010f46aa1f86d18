//! Counter-style random streams.
//!
//! Every stochastic object (a field cell, a Monte Carlo sample, a jump path)
//! owns a generator whose seed is a hash of the master seed and a tuple of
//! integer keys. Streams never depend on scheduling, so estimates are
//! bit-identical for any worker count.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = Xoshiro256PlusPlus;

/// Domain tags keep streams for different purposes disjoint.
pub mod domain {
    pub const FIELD_CELL: u64 = 0x11;
    pub const MICRO_SAMPLE: u64 = 0x21;
    pub const KINETIC_PATH: u64 = 0x31;
    pub const KINETIC_FICTITIOUS: u64 = 0x32;
    pub const SURVIVAL: u64 = 0x33;
    pub const WHOLE_PLANE: u64 = 0x34;
    pub const PATHOLOGY: u64 = 0x41;
    pub const REALIZATION: u64 = 0x51;
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a master seed and a key tuple into a 64-bit stream key.
#[inline]
pub fn stream_key(seed: u64, keys: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ 0x6a09_e667_f3bc_c908);
    for &k in keys {
        h = splitmix(h ^ splitmix(k.wrapping_add(0x3c6e_f372_fe94_f82b)));
    }
    h
}

#[inline]
pub fn stream(seed: u64, keys: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(stream_key(seed, keys))
}
