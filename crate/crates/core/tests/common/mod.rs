//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use compsamp::nn::{mlp_grad, mlp_init, Activation, Loss, MlpParams};
use compsamp::rng;
use compsamp::Matrix;

/// Relative error with a floor on the denominator, so that coordinates whose
/// gradient is numerically zero are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn random_matrix(n: usize, d: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, 0xfeed, 0);
    Matrix::from_shape_fn((n, d), |_| rng::normal(&mut r))
}

/// Relative errors of analytic against central-difference gradients for
/// every parameter of a freshly initialised network.
pub fn gradient_errors(dims: &[usize], activation: Activation, loss: Loss, n: usize, seed: u64, h: f64) -> Vec<f64> {
    let mut p = mlp_init(dims, activation, seed).unwrap();
    // Non-zero biases so every code path is exercised.
    let mut r = rng::stream(seed, 0xb1a5, 0);
    for (i, s) in p.slices_mut().enumerate() {
        if i % 2 == 1 {
            s.iter_mut().for_each(|v| *v = 0.1 * rng::normal(&mut r));
        }
    }
    let x = random_matrix(n, dims[0], seed ^ 1);
    let y = random_matrix(n, *dims.last().unwrap(), seed ^ 2);
    let (_, grads) = mlp_grad(&p, &x, &y, loss).unwrap();
    let analytic: Vec<f64> = grads.slices().flat_map(|s| s.to_vec()).collect();
    let eval = |q: &MlpParams| mlp_grad(q, &x, &y, loss).unwrap().0;
    let mut errs = Vec::with_capacity(analytic.len());
    let mut k = 0;
    let n_slices = p.slices().count();
    for si in 0..n_slices {
        let len = p.slices().nth(si).unwrap().len();
        for j in 0..len {
            let orig = p.slices().nth(si).unwrap()[j];
            p.slices_mut().nth(si).unwrap()[j] = orig + h;
            let up = eval(&p);
            p.slices_mut().nth(si).unwrap()[j] = orig - h;
            let down = eval(&p);
            p.slices_mut().nth(si).unwrap()[j] = orig;
            errs.push(rel_err(analytic[k], (up - down) / (2.0 * h)));
            k += 1;
        }
    }
    errs
}

pub fn fraction_below(errs: &[f64], tol: f64) -> f64 {
    errs.iter().filter(|&&e| e < tol).count() as f64 / errs.len() as f64
}

pub fn max_of(errs: &[f64]) -> f64 {
    errs.iter().copied().fold(0.0, f64::max)
}
