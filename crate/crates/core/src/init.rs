use rand::Rng;

use crate::tensor::{Scalar, Tensor};

/// `rows × cols` matrix with entries drawn from Uniform(-1/√fan_in, 1/√fan_in).
pub fn uniform<S: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Tensor<S> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| S::lit(rng.random_range(-bound..bound))).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}
