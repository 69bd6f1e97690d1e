//! Seeded, splittable random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by the
//! master seed, a purpose tag and up to two indices (round, client, step...).
//! Streams never depend on evaluation order, so parallel execution cannot
//! change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Synthetic = 1,
    Split = 2,
    Partition = 3,
    Reducer = 4,
    ModelInit = 5,
    ClientSelection = 6,
    Lot = 7,
    Noise = 8,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stream for `(purpose, a, b)` under `seed`.
pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> StreamRng {
    let id = splitmix64(splitmix64(splitmix64(purpose as u64) ^ a) ^ b);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
