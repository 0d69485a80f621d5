//! Seeded parameter initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviation of the normal initializer used for conv weights.
pub const INIT_STD: f64 = 0.02;

pub fn normal<T: Scalar, R: Rng>(shape: &[usize], mean: f64, std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(mean, std).expect("std must be finite and non-negative");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

pub fn uniform<T: Scalar, R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(rng.gen_range(lo..hi))).collect();
    Tensor::new(shape, data).expect("length matches shape")
}
