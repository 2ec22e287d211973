//! Seeded random streams for the simulation generators.
//!
//! Everything random in this crate flows through ChaCha8, a portable
//! counter-based generator, so that a `(seed, replicate)` pair reproduces the
//! exact same data on any platform. Independent parts of a simulation draw
//! from separate streams of the same seed rather than sharing one sequence;
//! the stream ids are fixed constants below. Replicate `r` of a study uses
//! `seed.wrapping_add(r)`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids, one per independent source of randomness.
pub mod stream {
    pub const DESIGN: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const LATENT: u64 = 3;
    pub const LABELS: u64 = 4;
    pub const SUBSAMPLE: u64 = 5;
    pub const FOLDS: u64 = 6;
}

/// A generator positioned on one named stream of a seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for replicate `r` of a repeated experiment.
pub fn replicate_seed(base: u64, replicate: u64) -> u64 {
    base.wrapping_add(replicate)
}

/// Derive an unrelated sub-seed (SplitMix64 of `seed ^ salt`); used where a
/// replicate needs fully independent data, e.g. its held-out test set.
pub fn derive(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Standard normal draw via Box-Muller.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
