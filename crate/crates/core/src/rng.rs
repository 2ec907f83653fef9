//! Seeded random streams.
//!
//! Every stochastic entry point takes an explicit generator. Independent
//! work items (seeds, sweep cells, heatmap cells) get their own stream
//! derived from a base seed and a stream index, so results do not depend on
//! scheduling order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

/// Generator used throughout the crate.
pub type BenchRng = ChaCha8Rng;

/// Generator seeded directly from `seed`.
pub fn seeded(seed: u64) -> BenchRng {
    BenchRng::seed_from_u64(seed)
}

/// Independent generator for sub-stream `stream` of `seed`.
pub fn derive_stream(seed: u64, stream: u64) -> BenchRng {
    let mut rng = BenchRng::seed_from_u64(splitmix64(seed ^ splitmix64(stream)));
    rng.set_stream(stream);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One standard-normal draw converted to `T`.
#[inline]
pub fn standard_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = rng.sample(StandardNormal);
    T::lit(z)
}
