use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Uniform};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::RunRng;
use crate::scalar::Scalar;

/// Glorot (Xavier) uniform: every entry drawn from `[-L, L]` with
/// `L = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar>(fan_in: usize, fan_out: usize, shape: &[usize], seed: u64) -> Result<Tensor<T>> {
    glorot_uniform_with(fan_in, fan_out, shape, &mut RunRng::seed_from_u64(seed))
}

pub fn glorot_uniform_with<T: Scalar, R: Rng>(
    fan_in: usize,
    fan_out: usize,
    shape: &[usize],
    rng: &mut R,
) -> Result<Tensor<T>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::Domain(format!("glorot fans must be positive (got {fan_in}, {fan_out})")));
    }
    let limit = glorot_limit(fan_in, fan_out);
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite positive limit");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data)
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
