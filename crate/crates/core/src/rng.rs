//! Deterministic random streams.
//!
//! Every stochastic routine draws from ChaCha8 seeded with
//! `ChaCha8Rng::seed_from_u64(seed)` and switched to stream `index` with
//! `set_stream(index)`, where `index` is the replicate (or replication)
//! number. Integers in `[0, n)` are taken as the high 64 bits of
//! `next_u64() * n` (128-bit product); uniform floats in `[0, 1)` as
//! `(next_u64() >> 11) * 2^-53`. Both mappings are fixed here so results
//! do not depend on the `rand` version.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn index_below(rng: &mut impl RngCore, n: usize) -> usize {
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
