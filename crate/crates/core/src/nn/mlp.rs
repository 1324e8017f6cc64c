use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// `x·σ(x)`, a.k.a. SiLU / swish.
    Silu,
    Relu,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Silu => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Silu),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Relu => x.max(0.0),
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    MeanSquared,
    MeanAbsolute,
}

/// Weights and biases of a fully connected network.
///
/// Layer `i` maps `layer_dims[i]` inputs to `layer_dims[i + 1]` outputs with
/// a weight matrix of shape `(out, in)`. Hidden layers use `activation`, the
/// output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_dims: Vec<usize>,
    activation: Activation,
    pub(crate) weights: Vec<Array2<f64>>,
    pub(crate) biases: Vec<Array1<f64>>,
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::invalid(
            "a network needs at least an input and an output dimension",
        ));
    }
    if layer_dims.contains(&0) {
        return Err(Error::invalid(format!(
            "layer dimensions must be positive, got {layer_dims:?}"
        )));
    }
    Ok(())
}

/// Weights `N(0, 1/fan_in)`, zero biases.
pub fn mlp_init(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<MlpParams> {
    check_dims(layer_dims)?;
    let mut r = rng::stream(seed, rng::tag::INIT, 0);
    let mut weights = Vec::with_capacity(layer_dims.len() - 1);
    let mut biases = Vec::with_capacity(layer_dims.len() - 1);
    for pair in layer_dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let scale = 1.0 / (fan_in as f64).sqrt();
        weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| {
            scale * rng::normal(&mut r)
        }));
        biases.push(Array1::zeros(fan_out));
    }
    Ok(MlpParams {
        layer_dims: layer_dims.to_vec(),
        activation,
        weights,
        biases,
    })
}

pub fn mlp_forward(p: &MlpParams, input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != p.input_dim() {
        return Err(Error::invalid(format!(
            "input length {} does not match network input dimension {}",
            input.len(),
            p.input_dim()
        )));
    }
    let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous row");
    Ok(p.forward_batch(x).into_raw_vec_and_offset().0)
}

/// Loss averaged over batch and output coordinates, and its exact gradient
/// with respect to every weight and bias.
pub fn mlp_grad(p: &MlpParams, inputs: &Matrix, targets: &Matrix, loss: Loss) -> Result<(f64, MlpParams)> {
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if inputs.ncols() != p.input_dim() {
        return Err(Error::invalid(format!(
            "batch input width {} does not match network input dimension {}",
            inputs.ncols(),
            p.input_dim()
        )));
    }
    if targets.dim() != (n, p.output_dim()) {
        return Err(Error::invalid(format!(
            "targets have shape {:?}, expected ({n}, {})",
            targets.dim(),
            p.output_dim()
        )));
    }

    // Forward pass, caching pre-activations and layer inputs.
    let layers = p.weights.len();
    let mut pre = Vec::with_capacity(layers);
    let mut acts: Vec<Array2<f64>> = Vec::with_capacity(layers);
    let mut h = inputs.to_owned();
    for i in 0..layers {
        let z = h.dot(&p.weights[i].t()) + &p.biases[i];
        acts.push(h);
        if i + 1 < layers {
            h = z.mapv(|v| p.activation.apply(v));
        } else {
            h = z.clone();
        }
        pre.push(z);
    }

    let count = (n * p.output_dim()) as f64;
    let diff = &h - targets;
    let (value, mut delta) = match loss {
        Loss::MeanSquared => (
            diff.iter().map(|d| d * d).sum::<f64>() / count,
            diff.mapv(|d| 2.0 * d / count),
        ),
        Loss::MeanAbsolute => (
            diff.iter().map(|d| d.abs()).sum::<f64>() / count,
            diff.mapv(|d| {
                if d > 0.0 {
                    1.0 / count
                } else if d < 0.0 {
                    -1.0 / count
                } else {
                    0.0
                }
            }),
        ),
    };

    let mut grads = p.zeros_like();
    for i in (0..layers).rev() {
        // Written in place so the result keeps standard layout.
        general_mat_mul(1.0, &delta.t(), &acts[i], 0.0, &mut grads.weights[i]);
        grads.biases[i] = delta.sum_axis(Axis(0));
        if i > 0 {
            let mut back = delta.dot(&p.weights[i]);
            back.zip_mut_with(&pre[i - 1], |b, &z| *b *= p.activation.derivative(z));
            delta = back;
        }
    }
    Ok((value, grads))
}

impl MlpParams {
    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated non-empty")
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn zeros_like(&self) -> MlpParams {
        MlpParams {
            layer_dims: self.layer_dims.clone(),
            activation: self.activation,
            weights: self.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    /// Zeroes the output layer so the network computes exactly 0 everywhere.
    pub fn zero_output_layer(&mut self) {
        let last = self.weights.len() - 1;
        self.weights[last].fill(0.0);
        self.biases[last].fill(0.0);
    }

    pub fn num_params(&self) -> usize {
        self.slices().map(|s| s.len()).sum()
    }

    /// Parameter blocks in storage order: `W_0, b_0, W_1, b_1, …`.
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| {
            [
                w.as_slice().expect("standard layout"),
                b.as_slice().expect("standard layout"),
            ]
        })
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| {
            [
                w.as_slice_mut().expect("standard layout"),
                b.as_slice_mut().expect("standard layout"),
            ]
        })
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layer_dims == other.layer_dims
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Rebuilds a network from its dims and a flat parameter list in
    /// [`slices`](Self::slices) order.
    pub fn from_flat(layer_dims: &[usize], activation: Activation, flat: &[f64]) -> Result<MlpParams> {
        check_dims(layer_dims)?;
        let mut p = MlpParams {
            layer_dims: layer_dims.to_vec(),
            activation,
            weights: layer_dims.windows(2).map(|d| Array2::zeros((d[1], d[0]))).collect(),
            biases: layer_dims.windows(2).map(|d| Array1::zeros(d[1])).collect(),
        };
        if flat.len() != p.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                p.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for s in p.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(p)
    }

    /// Batched forward pass over the rows of `inputs`.
    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Matrix {
        let layers = self.weights.len();
        let mut h = inputs.dot(&self.weights[0].t()) + &self.biases[0];
        for i in 1..layers {
            h.mapv_inplace(|v| self.activation.apply(v));
            h = h.dot(&self.weights[i].t()) + &self.biases[i];
        }
        h
    }
}
