use crate::error::{Error, Result};

/// Sinusoidal features of normalised time `τ = t / T`:
/// `[sin(τ·ω_0) … sin(τ·ω_{k−1}), cos(τ·ω_0) … cos(τ·ω_{k−1})]` with
/// `ω_k = 10000^(−2k/dim)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeEmbedding {
    dim: usize,
}

impl TimeEmbedding {
    pub const DEFAULT_DIM: usize = 16;

    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "time embedding dimension must be even and positive, got {dim}"
            )));
        }
        Ok(TimeEmbedding { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes the embedding of step `t` out of `t_max` into `out`.
    pub fn embed_into(&self, t: usize, t_max: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        let half = self.dim / 2;
        let tau = t as f64 / t_max as f64;
        for k in 0..half {
            let omega = 10000f64.powf(-2.0 * k as f64 / self.dim as f64);
            let (s, c) = (tau * omega).sin_cos();
            out[k] = s;
            out[half + k] = c;
        }
    }

    pub fn embed(&self, t: usize, t_max: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.embed_into(t, t_max, &mut out);
        out
    }
}

impl Default for TimeEmbedding {
    fn default() -> Self {
        TimeEmbedding { dim: Self::DEFAULT_DIM }
    }
}
