//! Reproducible random streams.
//!
//! Every sample draws from its own ChaCha8 stream: the master seed is
//! expanded with `SeedableRng::seed_from_u64` and the sample index selects the
//! ChaCha stream word. Results therefore do not depend on generation order or
//! thread layout. Uniforms are the 53-bit `[0, 1)` doubles of `rand`; normal
//! variates use the cosine branch of Box–Muller, one variate per two uniforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent stream `index` of the master seed.
pub fn sample_stream(master_seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Uniform on `[low, high)`; exactly `low` when the interval is empty.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, low: f64, high: f64) -> f64 {
    let u: f64 = rng.random();
    low + (high - low) * u
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
