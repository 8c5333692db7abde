//! Seeded randomness.
//!
//! Every stochastic step (validation sampling, random selection, benchmark
//! generation) draws from xoshiro256++ seeded through `seed_from_u64`
//! (SplitMix64 expansion of the 64-bit seed). Independent streams derived
//! from one seed are separated with the generator's 2^128-step `jump`.

use rand::SeedableRng;
pub use rand_xoshiro::Xoshiro256PlusPlus as SeededRng;

/// Human-readable name of the generator, reported by `--version`.
pub const GENERATOR: &str = "xoshiro256++ (rand_xoshiro 0.7, seed_from_u64 via SplitMix64, streams via jump())";

/// Stream identifiers used across the crate.
pub mod streams {
    pub const VALIDATION_SAMPLE: u32 = 0;
    pub const RANDOM_SELECTION: u32 = 1;
    pub const BENCH_POOL: u32 = 2;
    pub const BENCH_VALIDATION: u32 = 3;
    pub const BENCH_TEST: u32 = 4;
}

/// Returns stream `stream` of the generator seeded with `seed`.
pub fn stream(seed: u64, stream: u32) -> SeededRng {
    let mut rng = SeededRng::seed_from_u64(seed);
    for _ in 0..stream {
        rng.jump();
    }
    rng
}
