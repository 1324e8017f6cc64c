//! Reverse-process step rules and generation drivers.
//!
//! Each rule has a pure update that takes the model outputs explicitly
//! (`*_update`) and a convenience wrapper that queries a [`DenoiserHandle`].
//! Steps move from `t` to `t_prev < t`; `t_prev = 0` lands on clean data.

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::denoisers::{x0_from_eps, x0_from_eps_batch, CompensationHandle, DenoiserHandle};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::schedule::NoiseSchedule;
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Ddpm,
    Ddim,
    Cold,
    CompOracle,
    CompLearned,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Ddpm => "ddpm",
            Rule::Ddim => "ddim",
            Rule::Cold => "cold",
            Rule::CompOracle => "comp-oracle",
            Rule::CompLearned => "comp-learned",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "ddpm" => Rule::Ddpm,
            "ddim" => Rule::Ddim,
            "cold" => Rule::Cold,
            "comp-oracle" => Rule::CompOracle,
            "comp-learned" => Rule::CompLearned,
            other => return Err(Error::invalid(format!("unknown sampler rule {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerParams {
    pub rule: Rule,
    /// Stochasticity of DDIM steps; `σ_t` is derived per step from it.
    pub eta: f64,
    /// Strictly decreasing visit times, starting at `T`. The last step goes to 0.
    pub time_grid: Vec<usize>,
    pub use_comp_at_inference: bool,
    /// Rescale the learned compensation by `(g(t) − g(t_prev)) / w(t)` on
    /// strided grids.
    pub stride_scaling: bool,
}

impl SamplerParams {
    pub fn new(rule: Rule, time_grid: Vec<usize>) -> Self {
        SamplerParams {
            rule,
            eta: 0.0,
            time_grid,
            use_comp_at_inference: true,
            stride_scaling: true,
        }
    }

    pub fn validate(&self, s: &NoiseSchedule) -> Result<()> {
        validate_grid(&self.time_grid, s)?;
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!(
                "eta must be finite and non-negative, got {}",
                self.eta
            )));
        }
        if self.rule == Rule::Ddpm && self.time_grid.windows(2).any(|p| p[0] != p[1] + 1) {
            return Err(Error::invalid("ddpm steps require the full unit-stride grid"));
        }
        Ok(())
    }

    /// Grid pairs `(t, t_prev)` including the final step to 0.
    pub fn steps(&self) -> Vec<(usize, usize)> {
        grid_steps(&self.time_grid)
    }
}

/// `[T, T−1, …, 1]`.
pub fn full_grid(t_max: usize) -> Vec<usize> {
    (1..=t_max).rev().collect()
}

/// `nfe` evenly strided times ending near 1 and starting at `T`,
/// e.g. `T = 100, nfe = 10` gives `[100, 90, …, 10]`.
pub fn strided_grid(t_max: usize, nfe: usize) -> Result<Vec<usize>> {
    if nfe == 0 || nfe > t_max {
        return Err(Error::invalid(format!("nfe must lie in [1, {t_max}], got {nfe}")));
    }
    Ok((1..=nfe).rev().map(|i| (i * t_max + nfe / 2) / nfe).collect())
}

pub fn validate_grid(grid: &[usize], s: &NoiseSchedule) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("time grid is empty"));
    }
    if grid[0] != s.t_max() {
        return Err(Error::invalid(format!(
            "time grid must start at T = {}, starts at {}",
            s.t_max(),
            grid[0]
        )));
    }
    if grid.iter().any(|&t| t == 0 || t > s.t_max()) {
        return Err(Error::invalid(format!(
            "time grid entries must lie in [1, {}]",
            s.t_max()
        )));
    }
    if grid.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::invalid("time grid must be strictly decreasing"));
    }
    Ok(())
}

pub fn grid_steps(grid: &[usize]) -> Vec<(usize, usize)> {
    grid.iter()
        .enumerate()
        .map(|(i, &t)| (t, grid.get(i + 1).copied().unwrap_or(0)))
        .collect()
}

fn check_pair(s: &NoiseSchedule, t: usize, t_prev: usize) -> Result<()> {
    s.check_step(t)?;
    if t_prev >= t {
        return Err(Error::invalid(format!("step must decrease time, got {t} -> {t_prev}")));
    }
    Ok(())
}

fn check_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("{what}: dimension {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// `σ = η·√((1−ᾱ_prev)/(1−ᾱ_t))·√(1−ᾱ_t/ᾱ_prev)`.
pub fn ddim_sigma(s: &NoiseSchedule, t: usize, t_prev: usize, eta: f64) -> f64 {
    if eta == 0.0 {
        return 0.0;
    }
    let (ab, ab_prev) = (s.alpha_bar(t), s.alpha_bar(t_prev));
    eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt()
}

// ---------------------------------------------------------------------------
// Pure updates

/// DDPM ancestral mean `(x_t − β_t/f(t)·ε̂)/√α_t`, plus `√β_t·ξ` when noise is
/// supplied.
pub fn ddpm_update(x_t: &[f64], eps: &[f64], t: usize, s: &NoiseSchedule, noise: Option<&[f64]>) -> Result<Vec<f64>> {
    s.check_step(t)?;
    check_len(x_t, eps, "ddpm update")?;
    let (a, b, f) = (s.alpha(t), s.beta(t), s.f(t));
    let inv = 1.0 / a.sqrt();
    let k = b / f;
    let mut out: Vec<f64> = x_t.iter().zip(eps).map(|(x, e)| inv * (x - k * e)).collect();
    if let Some(xi) = noise {
        check_len(x_t, xi, "ddpm noise")?;
        let sd = b.sqrt();
        out.iter_mut().zip(xi).for_each(|(o, n)| *o += sd * n);
    }
    Ok(out)
}

/// `g(t_prev)·x̂0 + √(f(t_prev)² − σ²)·ε̂ + σ·ξ`.
pub fn ddim_update(
    x_t: &[f64],
    eps: &[f64],
    (t, t_prev): (usize, usize),
    s: &NoiseSchedule,
    sigma: f64,
    noise: Option<&[f64]>,
) -> Result<Vec<f64>> {
    check_pair(s, t, t_prev)?;
    let x0 = x0_from_eps(x_t, eps, t, s)?;
    let (gp, fp) = (s.g(t_prev), s.f(t_prev));
    let dir = ddim_direction(fp, sigma)?;
    let mut out: Vec<f64> = x0.iter().zip(eps).map(|(x, e)| gp * x + dir * e).collect();
    if sigma > 0.0 {
        let xi = noise.ok_or_else(|| Error::invalid("stochastic DDIM step needs a noise draw"))?;
        check_len(x_t, xi, "ddim noise")?;
        out.iter_mut().zip(xi).for_each(|(o, n)| *o += sigma * n);
    }
    Ok(out)
}

fn ddim_direction(f_prev: f64, sigma: f64) -> Result<f64> {
    if sigma == 0.0 {
        return Ok(f_prev);
    }
    let rem = f_prev * f_prev - sigma * sigma;
    if rem < 0.0 || !(sigma >= 0.0) {
        return Err(Error::invalid(format!(
            "sigma {sigma} exceeds the noise level f(t_prev) = {f_prev}"
        )));
    }
    Ok(rem.sqrt())
}

/// Degradation-based step `x_t − D(x̂0, t) + D(x̂0, t_prev)` where `D` uses
/// the supplied noise pattern.
pub fn cold_update(
    x_t: &[f64],
    x0_hat: &[f64],
    z: &[f64],
    (t, t_prev): (usize, usize),
    s: &NoiseSchedule,
) -> Result<Vec<f64>> {
    check_pair(s, t, t_prev)?;
    check_len(x_t, x0_hat, "cold update")?;
    check_len(x_t, z, "cold update noise")?;
    let d_t = s.degrade(x0_hat, z, t)?;
    let d_prev = s.degrade(x0_hat, z, t_prev)?;
    Ok(x_t
        .iter()
        .zip(d_t.iter().zip(&d_prev))
        .map(|(x, (a, b))| x - a + b)
        .collect())
}

/// Compensated step with ground truth:
/// `x_t − D(x̂0, t) + D(x̂0, t_prev) + (g(t) − g(t_prev))·(x̂0 − x0)`.
/// Returns the compensated iterate and the compensation term.
pub fn comp_oracle_update(
    x_t: &[f64],
    x0_hat: &[f64],
    x0: &[f64],
    z: &[f64],
    (t, t_prev): (usize, usize),
    s: &NoiseSchedule,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(x0_hat, x0, "compensation target")?;
    let base = cold_update(x_t, x0_hat, z, (t, t_prev), s)?;
    let w = s.g(t) - s.g(t_prev);
    let term: Vec<f64> = x0_hat.iter().zip(x0).map(|(a, b)| w * (a - b)).collect();
    Ok((base.iter().zip(&term).map(|(b, c)| b + c).collect(), term))
}

// ---------------------------------------------------------------------------
// Handle-driven steps

pub fn ddpm_step(x_t: &[f64], t: usize, h: &DenoiserHandle, s: &NoiseSchedule, rng: &mut Rng) -> Result<Vec<f64>> {
    let eps = crate::denoisers::predict_eps(h, x_t, t, s)?;
    let noise = (t > 1).then(|| rng::normal_vec(rng, x_t.len()));
    ddpm_update(x_t, &eps, t, s, noise.as_deref())
}

pub fn ddim_step(
    x_t: &[f64],
    pair: (usize, usize),
    h: &DenoiserHandle,
    s: &NoiseSchedule,
    sigma: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    check_pair(s, pair.0, pair.1)?;
    ddim_direction(s.f(pair.1), sigma)?;
    let eps = crate::denoisers::predict_eps(h, x_t, pair.0, s)?;
    let noise = (sigma > 0.0).then(|| rng::normal_vec(rng, x_t.len()));
    ddim_update(x_t, &eps, pair, s, sigma, noise.as_deref())
}

/// Cold step at generation time: the unknown noise pattern inside `D` is
/// replaced by `ε̂`.
pub fn cold_step(x_t: &[f64], pair: (usize, usize), h: &DenoiserHandle, s: &NoiseSchedule) -> Result<Vec<f64>> {
    check_pair(s, pair.0, pair.1)?;
    let eps = crate::denoisers::predict_eps(h, x_t, pair.0, s)?;
    let x0 = x0_from_eps(x_t, &eps, pair.0, s)?;
    cold_update(x_t, &x0, &eps, pair, s)
}

pub fn comp_step_oracle(
    x_t: &[f64],
    pair: (usize, usize),
    x0_hat: &[f64],
    x0: &[f64],
    z: &[f64],
    s: &NoiseSchedule,
) -> Result<Vec<f64>> {
    Ok(comp_oracle_update(x_t, x0_hat, x0, z, pair, s)?.0)
}

/// Scale applied to a compensation estimate trained at unit stride when
/// stepping `t → t_prev`.
pub fn stride_scale(s: &NoiseSchedule, t: usize, t_prev: usize, enabled: bool) -> f64 {
    if !enabled || t_prev + 1 == t {
        1.0
    } else {
        (s.g(t) - s.g(t_prev)) / s.w(t)
    }
}

/// DDIM step plus the learned compensation `ĉ(x̂0, t)`.
#[allow(clippy::too_many_arguments)]
pub fn comp_step_learned(
    x_t: &[f64],
    pair: (usize, usize),
    h: &DenoiserHandle,
    c: &CompensationHandle,
    s: &NoiseSchedule,
    sigma: f64,
    use_comp: bool,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let mut out = ddim_step(x_t, pair, h, s, sigma, rng)?;
    if use_comp && c.enabled_at_inference {
        let eps = crate::denoisers::predict_eps(h, x_t, pair.0, s)?;
        let x0 = x0_from_eps(x_t, &eps, pair.0, s)?;
        let chat = crate::denoisers::compensation_predict(c, &x0, pair.0, s)?;
        let k = stride_scale(s, pair.0, pair.1, true);
        if k == 1.0 {
            out.iter_mut().zip(&chat).for_each(|(o, v)| *o += v);
        } else {
            out.iter_mut().zip(&chat).for_each(|(o, v)| *o += k * v);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Generation

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    /// `(t, x_t)` in visiting order, ending at `t = 0`.
    pub iterates: Vec<(usize, Vec<f64>)>,
    /// `‖x_t − D(x0, z, t)‖₂` per iterate, when ground truth is known.
    pub deviations: Option<Vec<f64>>,
    /// Norm of the compensation applied on the step into each iterate
    /// (0 for the starting point and for uncompensated rules).
    pub comp_norms: Vec<f64>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<usize> {
        self.iterates.iter().map(|(t, _)| *t).collect()
    }

    pub fn terminal_deviation(&self) -> Option<f64> {
        self.deviations.as_ref().and_then(|d| d.last().copied())
    }
}

pub struct Generated {
    pub samples: Matrix,
    pub trajectories: Option<Vec<Trajectory>>,
}

fn norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Runs `n` independent chains of dimension `d` from `x_T ~ N(0, I)` down the
/// grid. Chain `i` draws its start and its step noise from substreams of
/// `(seed, i)`, so results do not depend on batch composition.
#[allow(clippy::too_many_arguments)]
pub fn generate(
    h: &DenoiserHandle,
    c: Option<&CompensationHandle>,
    sp: &SamplerParams,
    s: &NoiseSchedule,
    n: usize,
    d: usize,
    seed: u64,
    record: bool,
) -> Result<Generated> {
    sp.validate(s)?;
    if n == 0 {
        return Err(Error::invalid("need at least one chain"));
    }
    if d != h.data_dim() {
        return Err(Error::invalid(format!(
            "dimension {d} does not match denoiser dimension {}",
            h.data_dim()
        )));
    }
    let comp = match sp.rule {
        Rule::CompOracle => {
            return Err(Error::invalid(
                "comp-oracle needs ground-truth data; use trace_deviation",
            ));
        }
        Rule::CompLearned => {
            let c = c.ok_or_else(|| Error::invalid("comp-learned needs a compensation module"))?;
            if c.params.output_dim() != d {
                return Err(Error::invalid("compensation module dimension mismatch"));
            }
            (sp.use_comp_at_inference && c.enabled_at_inference).then_some(c)
        }
        _ => None,
    };

    let mut x = Matrix::zeros((n, d));
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        let mut r = rng::stream(seed, rng::tag::CHAIN_START, i as u64);
        row.iter_mut().for_each(|v| *v = rng::normal(&mut r));
    }
    let steps = sp.steps();
    let stochastic = sp.rule == Rule::Ddpm || (sp.eta > 0.0 && matches!(sp.rule, Rule::Ddim | Rule::CompLearned));
    let mut noise_rngs: Vec<Rng> = if stochastic {
        (0..n)
            .map(|i| rng::stream(seed, rng::tag::CHAIN_NOISE, i as u64))
            .collect()
    } else {
        Vec::new()
    };
    let draw = |rngs: &mut [Rng]| {
        let mut m = Matrix::zeros((n, d));
        for (row, r) in m.rows_mut().into_iter().zip(rngs.iter_mut()) {
            row.into_iter().for_each(|v| *v = rng::normal(r));
        }
        m
    };

    let mut trajs: Option<Vec<Trajectory>> = record.then(|| {
        x.rows()
            .into_iter()
            .map(|r| Trajectory {
                iterates: vec![(s.t_max(), r.to_vec())],
                deviations: None,
                comp_norms: vec![0.0],
            })
            .collect()
    });

    for (t, t_prev) in steps {
        let eps = h.predict_eps_batch(x.view(), t, s)?;
        let mut comp_norms = vec![0.0; n];
        x = match sp.rule {
            Rule::Ddpm => {
                let (a, b, f) = (s.alpha(t), s.beta(t), s.f(t));
                let (inv, k) = (1.0 / a.sqrt(), b / f);
                let mut out = Matrix::zeros((n, d));
                Zip::from(&mut out)
                    .and(&x)
                    .and(&eps)
                    .for_each(|o, &xv, &e| *o = inv * (xv - k * e));
                if t > 1 {
                    let xi = draw(&mut noise_rngs);
                    let sd = b.sqrt();
                    out.zip_mut_with(&xi, |o, n| *o += sd * n);
                }
                out
            }
            Rule::Ddim | Rule::CompLearned => {
                let sigma = ddim_sigma(s, t, t_prev, sp.eta);
                let dir = ddim_direction(s.f(t_prev), sigma)?;
                let gp = s.g(t_prev);
                let x0 = x0_from_eps_batch(x.view(), eps.view(), t, s)?;
                let mut out = Matrix::zeros((n, d));
                Zip::from(&mut out)
                    .and(&x0)
                    .and(&eps)
                    .for_each(|o, &a, &e| *o = gp * a + dir * e);
                if sigma > 0.0 {
                    let xi = draw(&mut noise_rngs);
                    out.zip_mut_with(&xi, |o, n| *o += sigma * n);
                }
                if let Some(c) = comp {
                    let chat = c.predict_batch(x0.view(), t, s)?;
                    let k = stride_scale(s, t, t_prev, sp.stride_scaling);
                    if k == 1.0 {
                        out += &chat;
                    } else {
                        out.scaled_add(k, &chat);
                    }
                    if record {
                        for (i, row) in chat.rows().into_iter().enumerate() {
                            comp_norms[i] = k.abs() * norm(row.iter().copied());
                        }
                    }
                }
                out
            }
            Rule::Cold => {
                let x0 = x0_from_eps_batch(x.view(), eps.view(), t, s)?;
                let (g, f, gp, fp) = (s.g(t), s.f(t), s.g(t_prev), s.f(t_prev));
                let mut out = x.clone();
                Zip::from(&mut out)
                    .and(&x0)
                    .and(&eps)
                    .for_each(|o, &a, &e| *o = *o - (g * a + f * e) + (gp * a + fp * e));
                out
            }
            Rule::CompOracle => unreachable!("rejected above"),
        };
        if let Some(trajs) = trajs.as_mut() {
            for (i, tr) in trajs.iter_mut().enumerate() {
                tr.iterates.push((t_prev, x.row(i).to_vec()));
                tr.comp_norms.push(comp_norms[i]);
            }
        }
    }
    Ok(Generated {
        samples: x,
        trajectories: trajs,
    })
}

/// Teacher-forced reverse pass from `x_T = D(x0, z, T)` using an injected
/// reconstruction `x̂0 = reconstruct(x_t, t)`, recording the distance to the
/// exact forward iterate at every visited time.
///
/// Supported rules: `ddim` (σ = 0, `ε̂` implied by `x̂0`), `cold` (true `z`
/// inside `D`) and `comp-oracle`.
pub fn trace_deviation(
    x0: &[f64],
    z: &[f64],
    s: &NoiseSchedule,
    rule: Rule,
    reconstruct: &mut dyn FnMut(&[f64], usize) -> Vec<f64>,
    grid: &[usize],
) -> Result<Trajectory> {
    validate_grid(grid, s)?;
    check_len(x0, z, "trace")?;
    let dev = |x: &[f64], t: usize| -> Result<f64> {
        let exact = s.degrade(x0, z, t)?;
        Ok(norm(x.iter().zip(&exact).map(|(a, b)| a - b)))
    };
    let mut x = s.degrade(x0, z, grid[0])?;
    let mut tr = Trajectory {
        iterates: vec![(grid[0], x.clone())],
        deviations: Some(vec![0.0]),
        comp_norms: vec![0.0],
    };
    for (t, t_prev) in grid_steps(grid) {
        let x0_hat = reconstruct(&x, t);
        check_len(&x, &x0_hat, "reconstruction")?;
        let mut comp_norm = 0.0;
        x = match rule {
            Rule::Ddim => {
                let (g, f) = (s.g(t), s.f(t));
                let eps: Vec<f64> = x.iter().zip(&x0_hat).map(|(xv, a)| (xv - g * a) / f).collect();
                let (gp, fp) = (s.g(t_prev), s.f(t_prev));
                x0_hat.iter().zip(&eps).map(|(a, e)| gp * a + fp * e).collect()
            }
            Rule::Cold => cold_update(&x, &x0_hat, z, (t, t_prev), s)?,
            Rule::CompOracle => {
                let (next, term) = comp_oracle_update(&x, &x0_hat, x0, z, (t, t_prev), s)?;
                comp_norm = norm(term);
                next
            }
            other => {
                return Err(Error::invalid(format!("trace does not support rule {}", other.name())));
            }
        };
        let d = dev(&x, t_prev)?;
        tr.iterates.push((t_prev, x.clone()));
        tr.deviations.as_mut().expect("set above").push(d);
        tr.comp_norms.push(comp_norm);
    }
    Ok(tr)
}
