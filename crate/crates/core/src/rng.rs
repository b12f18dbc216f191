use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream from a base seed and a label.
pub fn substream(seed: u64, label: u64) -> SeededRng {
    let mut rng = seeded(seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    // burn a few outputs so neighbouring labels decorrelate quickly
    for _ in 0..4 {
        let _: u64 = rng.random();
    }
    rng
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Normal with the given scale, rejection-truncated to `[lo, hi]`.
pub fn truncated_normal(rng: &mut impl Rng, scale: f64, lo: f64, hi: f64) -> f64 {
    loop {
        let v = scale * normal(rng);
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
}
