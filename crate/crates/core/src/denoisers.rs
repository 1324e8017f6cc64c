//! ε-prediction denoisers, clean-data reconstruction and the compensation
//! module.
//!
//! Every predictor works on a batch: rows of the input matrix are
//! independent chains sharing one time step.

use ndarray::{s, ArrayView2};

use crate::error::{Error, Result};
use crate::nn::{MlpParams, TimeEmbedding};
use crate::schedule::NoiseSchedule;
use crate::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserHandle {
    /// Network evaluated on `[x_t ‖ embed(t)]`.
    Trained {
        params: MlpParams,
        embedding: TimeEmbedding,
    },
    /// Exact posterior mean for data distributed as `N(μ, σ0²·I)`.
    GaussianOracle { mu: Vec<f64>, sigma0_sq: f64 },
}

/// Learned estimate of the compensation term `w(t)·(x̂0 − x0)` from
/// `[x̂0 ‖ embed(t)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensationHandle {
    pub params: MlpParams,
    pub embedding: TimeEmbedding,
    pub enabled_at_inference: bool,
}

/// Rows of `x` with the embedding of `t` appended.
pub fn conditioned_input(x: ArrayView2<'_, f64>, t: usize, t_max: usize, embedding: &TimeEmbedding) -> Matrix {
    let (n, d) = x.dim();
    let mut out = Matrix::zeros((n, d + embedding.dim()));
    out.slice_mut(s![.., ..d]).assign(&x);
    let e = embedding.embed(t, t_max);
    for mut row in out.rows_mut() {
        row.slice_mut(s![d..]).assign(&ndarray::aview1(&e));
    }
    out
}

/// Appends per-row time embeddings, for batches that mix time steps.
pub fn conditioned_input_mixed(
    x: ArrayView2<'_, f64>,
    ts: &[usize],
    t_max: usize,
    embedding: &TimeEmbedding,
) -> Matrix {
    let (n, d) = x.dim();
    debug_assert_eq!(ts.len(), n);
    let mut out = Matrix::zeros((n, d + embedding.dim()));
    out.slice_mut(s![.., ..d]).assign(&x);
    for (i, &t) in ts.iter().enumerate() {
        let mut row = out.row_mut(i);
        embedding.embed_into(t, t_max, row.as_slice_mut().expect("row-major").split_at_mut(d).1);
    }
    out
}

impl DenoiserHandle {
    pub fn trained(params: MlpParams, embedding: TimeEmbedding) -> Result<Self> {
        if params.input_dim() != params.output_dim() + embedding.dim() {
            return Err(Error::invalid(format!(
                "denoiser input dim {} must equal output dim {} plus embedding dim {}",
                params.input_dim(),
                params.output_dim(),
                embedding.dim()
            )));
        }
        Ok(DenoiserHandle::Trained { params, embedding })
    }

    pub fn gaussian_oracle(mu: Vec<f64>, sigma0_sq: f64) -> Result<Self> {
        if !(sigma0_sq > 0.0 && sigma0_sq.is_finite()) {
            return Err(Error::invalid(format!(
                "oracle variance must be positive, got {sigma0_sq}"
            )));
        }
        Ok(DenoiserHandle::GaussianOracle { mu, sigma0_sq })
    }

    pub fn data_dim(&self) -> usize {
        match self {
            DenoiserHandle::Trained { params, .. } => params.output_dim(),
            DenoiserHandle::GaussianOracle { mu, .. } => mu.len(),
        }
    }

    fn check(&self, x: ArrayView2<'_, f64>, t: usize, s: &NoiseSchedule) -> Result<()> {
        s.check_step(t)?;
        if x.ncols() != self.data_dim() {
            return Err(Error::invalid(format!(
                "data dimension {} does not match denoiser dimension {}",
                x.ncols(),
                self.data_dim()
            )));
        }
        Ok(())
    }

    /// `ε̂(x_t, t)` for every row of `x`.
    pub fn predict_eps_batch(&self, x: ArrayView2<'_, f64>, t: usize, s: &NoiseSchedule) -> Result<Matrix> {
        self.check(x, t, s)?;
        Ok(match self {
            DenoiserHandle::Trained { params, embedding } => {
                params.forward_batch(conditioned_input(x, t, s.t_max(), embedding).view())
            }
            DenoiserHandle::GaussianOracle { mu, sigma0_sq } => {
                let (g, f) = (s.g(t), s.f(t));
                let gain = g * sigma0_sq / (g * g * sigma0_sq + f * f);
                let mut out = x.to_owned();
                for mut row in out.rows_mut() {
                    for (v, m) in row.iter_mut().zip(mu) {
                        let x0 = m + gain * (*v - g * m);
                        *v = (*v - g * x0) / f;
                    }
                }
                out
            }
        })
    }

    /// Posterior mean `E[x0 | x_t]` used by the Gaussian oracle.
    pub fn oracle_posterior_mean(mu: &[f64], sigma0_sq: f64, x_t: &[f64], t: usize, s: &NoiseSchedule) -> Vec<f64> {
        let (g, f) = (s.g(t), s.f(t));
        let gain = g * sigma0_sq / (g * g * sigma0_sq + f * f);
        x_t.iter().zip(mu).map(|(x, m)| m + gain * (x - g * m)).collect()
    }

    pub fn predict_x0_batch(&self, x: ArrayView2<'_, f64>, t: usize, s: &NoiseSchedule) -> Result<Matrix> {
        let eps = self.predict_eps_batch(x, t, s)?;
        x0_from_eps_batch(x, eps.view(), t, s)
    }
}

pub fn predict_eps(h: &DenoiserHandle, x_t: &[f64], t: usize, s: &NoiseSchedule) -> Result<Vec<f64>> {
    let x = ArrayView2::from_shape((1, x_t.len()), x_t).expect("row");
    Ok(h.predict_eps_batch(x, t, s)?.into_raw_vec_and_offset().0)
}

/// `x̂0 = (x_t − f(t)·ε̂) / g(t)`.
pub fn x0_from_eps(x_t: &[f64], eps: &[f64], t: usize, s: &NoiseSchedule) -> Result<Vec<f64>> {
    let (g, f, _) = s.coeffs(t)?;
    if g.abs() < 1e-12 {
        return Err(Error::NumericDomain(format!(
            "signal coefficient g({t}) = {g:e} is too small to invert"
        )));
    }
    if x_t.len() != eps.len() {
        return Err(Error::invalid("x_t and ε̂ dimensions differ"));
    }
    Ok(x_t.iter().zip(eps).map(|(x, e)| (x - f * e) / g).collect())
}

pub fn x0_from_eps_batch(
    x: ArrayView2<'_, f64>,
    eps: ArrayView2<'_, f64>,
    t: usize,
    s: &NoiseSchedule,
) -> Result<Matrix> {
    let (g, f, _) = s.coeffs(t)?;
    if g.abs() < 1e-12 {
        return Err(Error::NumericDomain(format!(
            "signal coefficient g({t}) = {g:e} is too small to invert"
        )));
    }
    let mut out = x.to_owned();
    out.zip_mut_with(&eps, |v, e| *v = (*v - f * e) / g);
    Ok(out)
}

pub fn predict_x0(h: &DenoiserHandle, x_t: &[f64], t: usize, s: &NoiseSchedule) -> Result<Vec<f64>> {
    let eps = predict_eps(h, x_t, t, s)?;
    x0_from_eps(x_t, &eps, t, s)
}

impl CompensationHandle {
    pub fn new(params: MlpParams, embedding: TimeEmbedding, enabled_at_inference: bool) -> Result<Self> {
        if params.input_dim() != params.output_dim() + embedding.dim() {
            return Err(Error::invalid(format!(
                "compensation input dim {} must equal output dim {} plus embedding dim {}",
                params.input_dim(),
                params.output_dim(),
                embedding.dim()
            )));
        }
        Ok(CompensationHandle {
            params,
            embedding,
            enabled_at_inference,
        })
    }

    pub fn predict_batch(&self, x0_hat: ArrayView2<'_, f64>, t: usize, s: &NoiseSchedule) -> Result<Matrix> {
        s.check_step(t)?;
        if x0_hat.ncols() != self.params.output_dim() {
            return Err(Error::invalid(format!(
                "data dimension {} does not match compensation module dimension {}",
                x0_hat.ncols(),
                self.params.output_dim()
            )));
        }
        Ok(self
            .params
            .forward_batch(conditioned_input(x0_hat, t, s.t_max(), &self.embedding).view()))
    }
}

pub fn compensation_predict(c: &CompensationHandle, x0_hat: &[f64], t: usize, s: &NoiseSchedule) -> Result<Vec<f64>> {
    let x = ArrayView2::from_shape((1, x0_hat.len()), x0_hat).expect("row");
    Ok(c.predict_batch(x, t, s)?.into_raw_vec_and_offset().0)
}
