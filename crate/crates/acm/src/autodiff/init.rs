//! Glorot (Xavier) uniform initialization.

use crate::mat::Mat;
use crate::rng::Rng;

/// I.i.d. `Uniform(-s, s)` with `s = sqrt(6 / (rows + cols))`, drawn from the
/// crate's xoshiro256++ generator, so a `(shape, seed)` pair is reproducible.
pub fn glorot_init(rows: usize, cols: usize, seed: u64) -> Mat {
    assert!(rows >= 1 && cols >= 1, "glorot_init needs a non-empty shape");
    let s = (6.0 / (rows + cols) as f64).sqrt();
    let mut rng = Rng::new(seed);
    Mat::from_fn(rows, cols, |_, _| rng.uniform_in(-s, s))
}
