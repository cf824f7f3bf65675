//! Reproducible random streams.
//!
//! Per-sample work draws from a stream keyed by `(base seed, index)`, so the
//! result of a parallel pass does not depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::Scalar;

pub type EngineRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> EngineRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `index` of the generator seeded with `base`.
pub fn stream(base: u64, index: u64) -> EngineRng {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index);
    rng
}

#[inline]
pub fn std_normal<F: Scalar, R: Rng + ?Sized>(rng: &mut R) -> F {
    F::lit(rng.sample::<f64, _>(StandardNormal))
}

pub fn fill_std_normal<F: Scalar, R: Rng + ?Sized>(rng: &mut R, out: &mut [F]) {
    for v in out.iter_mut() {
        *v = std_normal(rng);
    }
}
