//! Seeded random streams. Every stochastic component draws from a
//! ChaCha8 stream derived from a `(seed, stream)` pair so runs are
//! reproducible bit-for-bit.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn fill_normal(rng: &mut Rng, out: &mut [f32]) {
    for v in out {
        *v = StandardNormal.sample(rng);
    }
}

pub fn normal(rng: &mut Rng) -> f32 {
    StandardNormal.sample(rng)
}
