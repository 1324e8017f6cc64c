//! Discrete variance-preserving noise schedules.
//!
//! A schedule over `T` steps stores `β_t`, `α_t = 1 − β_t` and the cumulative
//! product `ᾱ_t`, plus the signal and noise coefficients
//! `g(t) = √ᾱ_t`, `f(t) = √(1 − ᾱ_t)` and the per-step signal change
//! `w(t) = g(t) − g(t − 1)`. Index `t = 0` is clean data: `ᾱ_0 = 1`, so
//! `g(0) = 1` and `f(0) = 0`.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    t_max: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    // Indexed by t in 0..=T.
    g: Vec<f64>,
    f: Vec<f64>,
    w: Vec<f64>,
}

/// A fixed standard-normal noise pattern `z` and the seed it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePattern {
    pub z: Vec<f64>,
    pub seed: u64,
}

impl NoisePattern {
    pub fn draw(dim: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, rng::tag::NOISE_PATTERN, 0);
        NoisePattern {
            z: rng::normal_vec(&mut r, dim),
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }
}

impl NoiseSchedule {
    /// Linearly spaced `β` from `beta_start` to `beta_end` inclusive.
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::invalid("t_max must be at least 1"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "beta bounds must satisfy 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let betas = if t_max == 1 {
            vec![beta_start]
        } else {
            let span = (beta_end - beta_start) / (t_max - 1) as f64;
            (0..t_max)
                .map(|i| {
                    if i == t_max - 1 {
                        beta_end
                    } else {
                        beta_start + span * i as f64
                    }
                })
                .collect()
        };
        Self::from_betas(betas)
    }

    /// The default linear schedule `β ∈ [1e-4, 0.02]`.
    pub fn default_linear(t_max: usize) -> Result<Self> {
        Self::linear(t_max, DEFAULT_BETA_START, DEFAULT_BETA_END)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::invalid("every beta must lie in (0, 1)"));
        }
        if betas.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::invalid("betas must be non-decreasing"));
        }
        let t_max = betas.len();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(t_max);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let mut g = Vec::with_capacity(t_max + 1);
        let mut f = Vec::with_capacity(t_max + 1);
        g.push(1.0);
        f.push(0.0);
        for &ab in &alpha_bars {
            g.push(ab.sqrt());
            f.push((1.0 - ab).sqrt());
        }
        let mut w = vec![0.0; t_max + 1];
        for t in 1..=t_max {
            w[t] = g[t] - g[t - 1];
        }
        Ok(NoiseSchedule {
            t_max,
            betas,
            alphas,
            alpha_bars,
            g,
            f,
            w,
        })
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.t_max {
            return Err(Error::invalid(format!("time step {t} outside [0, {}]", self.t_max)));
        }
        Ok(())
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_max {
            return Err(Error::invalid(format!("time step {t} outside [1, {}]", self.t_max)));
        }
        Ok(())
    }

    /// `(g(t), f(t), w(t))`, with `w(0) = 0`.
    pub fn coeffs(&self, t: usize) -> Result<(f64, f64, f64)> {
        self.check_t(t)?;
        Ok((self.g[t], self.f[t], self.w[t]))
    }

    /// `ᾱ_t` with the convention `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    // Unchecked accessors for the hot sampling loops; callers validate t.
    #[inline]
    pub(crate) fn g(&self, t: usize) -> f64 {
        self.g[t]
    }

    #[inline]
    pub(crate) fn f(&self, t: usize) -> f64 {
        self.f[t]
    }

    #[inline]
    pub(crate) fn w(&self, t: usize) -> f64 {
        self.w[t]
    }

    /// `D(x0, t) = g(t)·x0 + f(t)·z`.
    pub fn degrade(&self, x0: &[f64], z: &[f64], t: usize) -> Result<Vec<f64>> {
        self.check_t(t)?;
        if x0.len() != z.len() {
            return Err(Error::invalid(format!(
                "data dimension {} does not match noise dimension {}",
                x0.len(),
                z.len()
            )));
        }
        let (g, f) = (self.g[t], self.f[t]);
        Ok(x0.iter().zip(z).map(|(x, z)| g * x + f * z).collect())
    }

    /// One stochastic forward transition `x_t = √(1−β_t)·x_{t−1} + √β_t·ξ`.
    pub fn forward_step(&self, x_prev: &[f64], t: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        self.check_step(t)?;
        let b = self.beta(t);
        let (keep, noise) = ((1.0 - b).sqrt(), b.sqrt());
        Ok(x_prev.iter().map(|x| keep * x + noise * rng::normal(rng)).collect())
    }

    /// Hex SHA-256 over the little-endian bytes of `β`.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for b in &self.betas {
            h.update(b.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
