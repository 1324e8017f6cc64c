use serde::{Deserialize, Serialize};

use super::MlpParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: MlpParams,
    pub second_moment: MlpParams,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &MlpParams, config: AdamConfig) -> Self {
        AdamState {
            step_count: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            config,
        }
    }
}

pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, state: &mut AdamState) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.first_moment) || !params.same_shape(&state.second_moment)
    {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", params.layer_dims()),
            found: format!(
                "grads {:?}, moments {:?}",
                grads.layer_dims(),
                state.first_moment.layer_dims()
            ),
        });
    }
    state.step_count += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps_hat,
    } = state.config;
    let k = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(k);
    let c2 = 1.0 - beta2.powi(k);
    let blocks = params
        .slices_mut()
        .zip(grads.slices())
        .zip(state.first_moment.slices_mut().zip(state.second_moment.slices_mut()));
    for ((p, g), (m, v)) in blocks {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps_hat);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{mlp_grad, mlp_init, Activation, Loss};
    use crate::Matrix;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = mlp_init(&[2, 3], Activation::Silu, 1).unwrap();
        let before = p.clone();
        let mut g = p.zeros_like();
        for (i, s) in g.slices_mut().enumerate() {
            for (j, v) in s.iter_mut().enumerate() {
                *v = if (i + j) % 2 == 0 { 0.37 } else { -2.5 };
            }
        }
        let mut st = AdamState::new(&p, AdamConfig::with_lr(1e-3));
        adam_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(st.step_count, 1);
        for ((a, b), gs) in p.slices().zip(before.slices()).zip(g.slices()) {
            for ((x, y), gv) in a.iter().zip(b).zip(gs) {
                let expect = -1e-3 * gv.signum();
                assert!(((x - y) - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = mlp_init(&[2, 4, 2], Activation::Silu, 2).unwrap();
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = AdamState::new(&p, AdamConfig::default());
        for _ in 0..50 {
            adam_step(&mut p, &g, &mut st).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step_count, 50);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = mlp_init(&[2, 4, 2], Activation::Silu, 2).unwrap();
        let other = mlp_init(&[2, 3, 2], Activation::Silu, 2).unwrap();
        let mut st = AdamState::new(&p, AdamConfig::default());
        assert!(adam_step(&mut p, &other, &mut st).is_err());
    }

    fn toy_problem() -> (Matrix, Matrix) {
        // y = A x with a fixed 2×2 A on a grid of inputs.
        let xs: Vec<f64> = (0..64)
            .flat_map(|i| {
                let a = (i % 8) as f64 / 4.0 - 1.0;
                let b = (i / 8) as f64 / 4.0 - 1.0;
                [a, b]
            })
            .collect();
        let x = Matrix::from_shape_vec((64, 2), xs).unwrap();
        let y = x
            .map_axis(ndarray::Axis(1), |r| r[0] - 0.5 * r[1])
            .insert_axis(ndarray::Axis(1));
        let y2 = x
            .map_axis(ndarray::Axis(1), |r| 0.3 * r[0] + r[1])
            .insert_axis(ndarray::Axis(1));
        (x, ndarray::concatenate![ndarray::Axis(1), y, y2])
    }

    fn train(seed: u64, steps: usize) -> (MlpParams, f64, f64) {
        let (x, y) = toy_problem();
        let mut p = mlp_init(&[2, 16, 2], Activation::Silu, seed).unwrap();
        let mut st = AdamState::new(&p, AdamConfig::with_lr(1e-2));
        let (first, _) = mlp_grad(&p, &x, &y, Loss::MeanSquared).unwrap();
        let mut last = first;
        for _ in 0..steps {
            let (l, g) = mlp_grad(&p, &x, &y, Loss::MeanSquared).unwrap();
            last = l;
            adam_step(&mut p, &g, &mut st).unwrap();
        }
        (p, first, last)
    }

    #[test]
    fn adam_reduces_loss_on_linear_toy() {
        let (_, first, last) = train(4, 200);
        assert!(last <= 0.1 * first, "{first} -> {last}");
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        assert_eq!(train(9, 30).0, train(9, 30).0);
    }
}
