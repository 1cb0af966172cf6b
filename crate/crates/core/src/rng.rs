//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 keyed by a `u64` seed
//! plus a stream id, so a run is reproducible from its config alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifies the generator family recorded alongside run outputs.
pub const RNG_ALGORITHM: &str = "chacha8-v1";

pub(crate) const POLICY_STREAM: u64 = 0;
pub(crate) const JUDGE_STREAM: u64 = 1;
pub(crate) const SCENARIO_STREAM: u64 = 2;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a run seed with positional indices into a fresh seed.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, p| splitmix64(acc ^ splitmix64(*p)))
}
