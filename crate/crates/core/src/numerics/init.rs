use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Real, Tensor};

/// Glorot/Xavier uniform initialization on `±sqrt(6 / (fan_in + fan_out))`
/// with `fan_in = cols` and `fan_out = rows`.
pub fn glorot_init<F: Real>(rows: usize, cols: usize, seed: u64) -> Tensor<F> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    uniform_init(rows, cols, bound, &mut rng)
}

pub fn uniform_init<F: Real, R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Tensor<F> {
    let data = (0..rows * cols)
        .map(|_| F::lit(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("length matches shape")
}
