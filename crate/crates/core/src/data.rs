//! Toy data distributions.
//!
//! Raw draws are normalised to zero mean and unit per-coordinate variance
//! using statistics from a fixed 10⁵-point reference draw, so every kind
//! lives on a comparable scale.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::Matrix;

pub const REFERENCE_SIZE: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    GaussianSingle,
    GaussianMixture,
    Ring,
    Moons,
}

impl DatasetKind {
    fn stream_tag(self) -> u64 {
        match self {
            DatasetKind::GaussianSingle => rng::tag::DATA_GAUSSIAN_SINGLE,
            DatasetKind::GaussianMixture => rng::tag::DATA_GAUSSIAN_MIXTURE,
            DatasetKind::Ring => rng::tag::DATA_RING,
            DatasetKind::Moons => rng::tag::DATA_MOONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    GaussianSingle {
        mu: Vec<f64>,
        sigma0: f64,
    },
    /// Either explicit `means` or `modes` equally spaced on a circle of
    /// `radius`. Weights default to uniform.
    GaussianMixture {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        means: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        modes: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
        sigma: f64,
    },
    Ring {
        radius: f64,
        noise: f64,
    },
    Moons {
        noise: f64,
    },
}

impl DatasetSpec {
    /// Eight modes on a radius-2 circle with per-mode σ = 0.05.
    pub fn eight_modes() -> Self {
        DatasetSpec::GaussianMixture {
            means: None,
            modes: Some(8),
            radius: Some(2.0),
            weights: None,
            sigma: 0.05,
        }
    }

    pub fn standard_gaussian(dim: usize) -> Self {
        DatasetSpec::GaussianSingle {
            mu: vec![0.0; dim],
            sigma0: 1.0,
        }
    }

    pub fn kind(&self) -> DatasetKind {
        match self {
            DatasetSpec::GaussianSingle { .. } => DatasetKind::GaussianSingle,
            DatasetSpec::GaussianMixture { .. } => DatasetKind::GaussianMixture,
            DatasetSpec::Ring { .. } => DatasetKind::Ring,
            DatasetSpec::Moons { .. } => DatasetKind::Moons,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DatasetSpec::GaussianSingle { mu, .. } => mu.len(),
            _ => 2,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

/// Validated mixture description (raw coordinates).
#[derive(Debug, Clone)]
struct Mixture {
    means: Vec<Vec<f64>>,
    cumulative: Vec<f64>,
    sigma: f64,
}

#[derive(Debug, Clone)]
enum Law {
    Gaussian { mu: Vec<f64>, sigma0: f64 },
    Mixture(Mixture),
    Ring { radius: f64, noise: f64 },
    Moons { noise: f64 },
}

impl Law {
    fn from_spec(spec: &DatasetSpec) -> Result<Law> {
        Ok(match spec {
            DatasetSpec::GaussianSingle { mu, sigma0 } => {
                if mu.is_empty() {
                    return Err(Error::invalid("gaussian-single needs a non-empty mean"));
                }
                positive("sigma0", *sigma0)?;
                Law::Gaussian {
                    mu: mu.clone(),
                    sigma0: *sigma0,
                }
            }
            DatasetSpec::GaussianMixture {
                means,
                modes,
                radius,
                weights,
                sigma,
            } => {
                positive("sigma", *sigma)?;
                let means = match (means, modes, radius) {
                    (Some(m), None, None) => m.clone(),
                    (None, Some(k), Some(r)) => {
                        if *k == 0 {
                            return Err(Error::invalid("modes must be at least 1"));
                        }
                        positive("radius", *r)?;
                        (0..*k)
                            .map(|i| {
                                let a = 2.0 * PI * i as f64 / *k as f64;
                                vec![r * a.cos(), r * a.sin()]
                            })
                            .collect()
                    }
                    _ => {
                        return Err(Error::invalid(
                            "gaussian-mixture needs either `means` or both `modes` and `radius`",
                        ))
                    }
                };
                if means.is_empty() || means.iter().any(|m| m.len() != 2) {
                    return Err(Error::invalid("mixture means must be a non-empty list of 2-D points"));
                }
                let w = match weights {
                    Some(w) => {
                        if w.len() != means.len() {
                            return Err(Error::invalid("one weight per mixture mean is required"));
                        }
                        if w.iter().any(|&v| !(v > 0.0)) {
                            return Err(Error::invalid("mixture weights must be positive"));
                        }
                        let total: f64 = w.iter().sum();
                        if (total - 1.0).abs() > 1e-9 {
                            return Err(Error::invalid(format!("mixture weights must sum to 1, got {total}")));
                        }
                        w.clone()
                    }
                    None => vec![1.0 / means.len() as f64; means.len()],
                };
                let mut acc = 0.0;
                let cumulative = w
                    .iter()
                    .map(|v| {
                        acc += v;
                        acc
                    })
                    .collect();
                Law::Mixture(Mixture {
                    means,
                    cumulative,
                    sigma: *sigma,
                })
            }
            DatasetSpec::Ring { radius, noise } => {
                positive("radius", *radius)?;
                positive("noise", *noise)?;
                Law::Ring {
                    radius: *radius,
                    noise: *noise,
                }
            }
            DatasetSpec::Moons { noise } => {
                positive("noise", *noise)?;
                Law::Moons { noise: *noise }
            }
        })
    }

    fn draw(&self, r: &mut Rng, out: &mut [f64]) {
        match self {
            Law::Gaussian { mu, sigma0 } => {
                for (o, m) in out.iter_mut().zip(mu) {
                    *o = m + sigma0 * rng::normal(r);
                }
            }
            Law::Mixture(mix) => {
                let u: f64 = r.gen();
                let k = mix
                    .cumulative
                    .iter()
                    .position(|&c| u < c)
                    .unwrap_or(mix.means.len() - 1);
                for (o, m) in out.iter_mut().zip(&mix.means[k]) {
                    *o = m + mix.sigma * rng::normal(r);
                }
            }
            Law::Ring { radius, noise } => {
                let a = 2.0 * PI * r.gen::<f64>();
                out[0] = radius * a.cos() + noise * rng::normal(r);
                out[1] = radius * a.sin() + noise * rng::normal(r);
            }
            Law::Moons { noise } => {
                let a = PI * r.gen::<f64>();
                let (x, y) = if r.gen::<bool>() {
                    (a.cos(), a.sin())
                } else {
                    (1.0 - a.cos(), 0.5 - a.sin())
                };
                out[0] = x + noise * rng::normal(r);
                out[1] = y + noise * rng::normal(r);
            }
        }
    }
}

/// A validated spec together with its normalisation statistics.
#[derive(Debug, Clone)]
pub struct Dataset {
    spec: DatasetSpec,
    law: Law,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Dataset {
    pub fn new(spec: DatasetSpec) -> Result<Self> {
        let law = Law::from_spec(&spec)?;
        let d = spec.dim();
        let mut r = Self::reference_stream(spec.kind());
        let mut sum = vec![0.0; d];
        let mut sum_sq = vec![0.0; d];
        let mut buf = vec![0.0; d];
        for _ in 0..REFERENCE_SIZE {
            law.draw(&mut r, &mut buf);
            for j in 0..d {
                sum[j] += buf[j];
                sum_sq[j] += buf[j] * buf[j];
            }
        }
        let n = REFERENCE_SIZE as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale: Vec<f64> = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (sq / n - m * m).max(f64::MIN_POSITIVE).sqrt())
            .collect();
        Ok(Dataset { spec, law, mean, scale })
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Maps raw coordinates into the normalised frame.
    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    /// Mixture centres in normalised coordinates (empty for other kinds).
    pub fn mode_centers(&self) -> Vec<Vec<f64>> {
        match &self.law {
            Law::Mixture(m) => m.means.iter().map(|c| self.normalize(c)).collect(),
            _ => Vec::new(),
        }
    }

    /// Exact mean and per-coordinate variance in normalised coordinates, when
    /// the law is a single Gaussian.
    pub fn gaussian_moments(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match &self.law {
            Law::Gaussian { mu, sigma0 } => {
                let var = self.scale.iter().map(|s| (sigma0 / s).powi(2)).collect();
                Some((self.normalize(mu), var))
            }
            _ => None,
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Matrix> {
        if n == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        Ok(self.sample_from(n, &mut rng::stream(seed, self.spec.kind().stream_tag(), 0)))
    }

    /// The normalised reference draw the statistics were computed from.
    pub fn reference_draw(&self) -> Matrix {
        self.sample_from(REFERENCE_SIZE, &mut Self::reference_stream(self.spec.kind()))
    }

    fn reference_stream(kind: DatasetKind) -> Rng {
        rng::stream(kind.stream_tag(), rng::tag::DATA_REFERENCE, 0)
    }

    fn sample_from(&self, n: usize, r: &mut Rng) -> Matrix {
        let d = self.dim();
        let mut out = Matrix::zeros((n, d));
        for mut row in out.rows_mut() {
            let slot = row.as_slice_mut().expect("row-major");
            self.law.draw(r, slot);
            for ((v, m), s) in slot.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

pub fn dataset_sample(spec: &DatasetSpec, n: usize, seed: u64) -> Result<Matrix> {
    Dataset::new(spec.clone())?.sample(n, seed)
}
