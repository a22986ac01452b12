use rand::Rng;

use super::real::Real;
use super::tensor::Tensor;

/// Uniform draws in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let values = (0..n).map(|_| T::from_f64(rng.random_range(-limit..limit))).collect();
    Tensor::new(shape, values).expect("glorot shape")
}
