#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use qtsm::linalg::skew_part;
use qtsm::{FactorModel, RiccatiProblem, TimeGrid};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-bound..bound))
}

/// `A`, `σ`, `B`, `Ψ`, `θ`, `k`, `c_T` uniform in `[−2, 2]`;
/// `Υ = MMᵀ + skew`, `Θ = −NNᵀ + skew` with entries of order one.
pub fn random_problem(rng: &mut ChaCha8Rng, n: usize, maturity: f64, steps: usize) -> RiccatiProblem {
    let a = uniform(rng, n, n, 2.0);
    let sigma = uniform(rng, n, n, 2.0);
    let b = uniform_vec(rng, n, 2.0);
    let scale = 1.0 / (n as f64).sqrt();
    let m = uniform(rng, n, n, scale);
    let upsilon = &m * m.transpose() + skew_part(&uniform(rng, n, n, 1.0));
    let nn = uniform(rng, n, n, scale);
    let theta = -(&nn * nn.transpose()) + skew_part(&uniform(rng, n, n, 1.0));
    let psi = uniform_vec(rng, n, 2.0);
    let theta_vec = uniform_vec(rng, n, 2.0);
    let k = rng.random_range(-2.0..2.0);
    let c_t = rng.random_range(-2.0..2.0);
    let model = FactorModel::new(a, b, sigma, DVector::zeros(n)).unwrap();
    let grid = TimeGrid::new(maturity, steps).unwrap();
    RiccatiProblem::new(model, upsilon, theta, psi, theta_vec, k, c_t, grid).unwrap()
}
