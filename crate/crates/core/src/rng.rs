//! Seeded random streams.
//!
//! Every stochastic routine in the crate takes an explicit `u64` seed and
//! builds its generator here, so results are reproducible across runs and
//! platforms. Independent sub-streams (per sample, per run, per epoch) are
//! derived with a SplitMix64 mix of the parent seed and a stream index, which
//! keeps parallel and serial evaluation in agreement.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type IsdaRng = ChaCha20Rng;

pub fn seeded_rng(seed: u64) -> IsdaRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// SplitMix64 step: a bijection on `u64` with good avalanche.
fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministically derives the seed of sub-stream `stream` from `seed`.
/// Distinct streams of one seed always get distinct seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix(splitmix(seed) ^ stream)
}
