//! Finite-difference oracle shared by the kernel's unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Scalar, Tensor};

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;

pub fn random_vec<T: Scalar>(n: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| T::from_f64(rng.gen_range(-1.0..1.0))).collect()
}

pub fn random_tensor<T: Scalar>(shape: [usize; 4], seed: u64) -> Tensor<T> {
    Tensor::from_vec(shape, random_vec(shape.iter().product(), seed)).unwrap()
}

pub fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Central differences of `f` at `at`.
pub fn numeric_grad(at: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    numeric_grad_step(at, STEP, f)
}

/// Deep compositions cross ReLU/clamp kinks often at `STEP`; a smaller step
/// in f64 keeps those crossings rare.
pub fn numeric_grad_step(at: &[f64], step: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut v = at.to_vec();
    (0..at.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + step;
            let plus = f(&v);
            v[i] = orig - step;
            let minus = f(&v);
            v[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn check_gradient(analytic: &[f64], numeric: &[f64]) {
    check_gradient_floor(analytic, numeric, 1e-6);
}

/// `floor` bounds the denominator for near-zero gradients; it must exceed
/// the finite-difference roundoff of the step in use.
pub fn check_gradient_floor(analytic: &[f64], numeric: &[f64], floor: f64) {
    let err = max_relative_error(analytic, numeric, floor);
    assert!(err <= TOLERANCE, "relative error {err:e}\nanalytic {analytic:?}\nnumeric  {numeric:?}");
}
