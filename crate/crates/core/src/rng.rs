//! Seeded random streams. Every generator and initializer in the crate is a
//! pure function of its seed.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Independent stream `stream` derived from `seed`.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    rng.random_range(lo..hi)
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn index(rng: &mut Rng, len: usize) -> usize {
    rng.random_range(0..len)
}

/// Integer in `lo..=hi`.
pub fn int_inclusive(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    items.shuffle(rng);
}
