//! Joint training of the ε-prediction denoiser and the compensation module.
//!
//! Each outer step takes one Adam step on the denoiser's noise-regression
//! loss, then `K` Adam steps of the compensation module on the same clean
//! batch with targets `w(t)·(x̂0 − x0)` computed from the freshly updated,
//! frozen denoiser.

use std::time::Instant;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetSpec};
use crate::denoisers::{conditioned_input_mixed, CompensationHandle, DenoiserHandle};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricReport};
use crate::nn::{adam_step, mlp_grad, mlp_init, Activation, AdamConfig, AdamState, Loss, MlpParams, TimeEmbedding};
use crate::rng::{self, Rng};
use crate::samplers::{full_grid, generate, Rule, SamplerParams};
use crate::schedule::NoiseSchedule;
use crate::Matrix;

/// Number of time bins used by the compensation-magnitude log.
pub const TIME_DECILES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub t_max: usize,
    #[serde(default = "defaults::beta_start")]
    pub beta_start: f64,
    #[serde(default = "defaults::beta_end")]
    pub beta_end: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::outer_steps")]
    pub outer_steps: usize,
    /// Inner compensation-module steps per outer step; 0 disables updates.
    #[serde(default = "defaults::comp_inner_iters")]
    pub comp_inner_iters: usize,
    #[serde(default = "defaults::lr_denoiser")]
    pub lr_denoiser: f64,
    #[serde(default = "defaults::lr_comp")]
    pub lr_comp: f64,
    /// Evaluation period in outer steps; 0 evaluates only at the end.
    #[serde(default = "defaults::eval_every")]
    pub eval_every: usize,
    #[serde(default = "defaults::eval_samples")]
    pub eval_samples: usize,
    #[serde(default = "defaults::eval_projections")]
    pub eval_projections: usize,
    #[serde(default = "defaults::eval_k")]
    pub eval_k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "DatasetSpec::eight_modes")]
    pub dataset: DatasetSpec,
    #[serde(default = "defaults::yes")]
    pub comp_enabled: bool,
    /// Apply the learned compensation when sampling evaluation snapshots.
    #[serde(default = "defaults::yes")]
    pub comp_at_inference: bool,
    #[serde(default = "defaults::denoiser_hidden")]
    pub denoiser_hidden: Vec<usize>,
    #[serde(default = "defaults::comp_hidden")]
    pub comp_hidden: Vec<usize>,
    #[serde(default = "defaults::embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "defaults::activation")]
    pub activation: Activation,
    /// Outer-step buckets in the compensation-magnitude log.
    #[serde(default = "defaults::magnitude_buckets")]
    pub magnitude_buckets: usize,
    /// Record wall-clock seconds in logs. Off by default so logs replay
    /// byte-for-byte.
    #[serde(default)]
    pub record_wallclock: bool,
}

mod defaults {
    use crate::nn::Activation;

    pub fn beta_start() -> f64 {
        crate::schedule::DEFAULT_BETA_START
    }
    pub fn beta_end() -> f64 {
        crate::schedule::DEFAULT_BETA_END
    }
    pub fn batch_size() -> usize {
        256
    }
    pub fn outer_steps() -> usize {
        3000
    }
    pub fn comp_inner_iters() -> usize {
        1
    }
    pub fn lr_denoiser() -> f64 {
        2e-4
    }
    pub fn lr_comp() -> f64 {
        1e-4
    }
    pub fn eval_every() -> usize {
        500
    }
    pub fn eval_samples() -> usize {
        2048
    }
    pub fn eval_projections() -> usize {
        crate::metrics::DEFAULT_PROJECTIONS
    }
    pub fn eval_k() -> usize {
        crate::metrics::DEFAULT_K
    }
    pub fn yes() -> bool {
        true
    }
    pub fn denoiser_hidden() -> Vec<usize> {
        vec![128, 128, 128]
    }
    pub fn comp_hidden() -> Vec<usize> {
        vec![64, 64]
    }
    pub fn embedding_dim() -> usize {
        16
    }
    pub fn activation() -> Activation {
        Activation::Silu
    }
    pub fn magnitude_buckets() -> usize {
        20
    }
}

impl TrainConfig {
    pub fn new(t_max: usize) -> Self {
        serde_json::from_value(serde_json::json!({ "t_max": t_max })).expect("defaults are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("`{field}` {why}")));
        if self.t_max == 0 {
            return bad("t_max", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.outer_steps == 0 {
            return bad("outer_steps", "must be at least 1");
        }
        if !(self.lr_denoiser > 0.0) {
            return bad("lr_denoiser", "must be positive");
        }
        if !(self.lr_comp > 0.0) {
            return bad("lr_comp", "must be positive");
        }
        if self.eval_samples <= self.eval_k {
            return bad("eval_samples", "must exceed eval_k");
        }
        if self.eval_k == 0 {
            return bad("eval_k", "must be at least 1");
        }
        if self.eval_projections == 0 {
            return bad("eval_projections", "must be at least 1");
        }
        if self.magnitude_buckets == 0 {
            return bad("magnitude_buckets", "must be at least 1");
        }
        if self.denoiser_hidden.contains(&0) || self.comp_hidden.contains(&0) {
            return bad("denoiser_hidden/comp_hidden", "entries must be positive");
        }
        TimeEmbedding::new(self.embedding_dim).map_err(|e| Error::Config(format!("`embedding_dim` {e}")))?;
        self.schedule()
            .map_err(|e| Error::Config(format!("`beta_start`/`beta_end`: {e}")))?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.t_max, self.beta_start, self.beta_end)
    }

    pub fn denoiser_dims(&self, d: usize) -> Vec<usize> {
        let mut v = vec![d + self.embedding_dim];
        v.extend(&self.denoiser_hidden);
        v.push(d);
        v
    }

    pub fn comp_dims(&self, d: usize) -> Vec<usize> {
        let mut v = vec![d + self.embedding_dim];
        v.extend(&self.comp_hidden);
        v.push(d);
        v
    }
}

/// Mean `‖w(t)·(x̂0 − x0)‖₂` per (outer-step bucket, time decile).
#[derive(Debug, Clone, PartialEq)]
pub struct CompMagnitudeLog {
    pub buckets: usize,
    pub outer_steps: usize,
    pub t_max: usize,
    sums: Vec<[f64; TIME_DECILES]>,
    counts: Vec<[u64; TIME_DECILES]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagnitudeRow {
    pub bucket: usize,
    pub decile: usize,
    pub mean_norm: f64,
}

impl CompMagnitudeLog {
    pub fn new(buckets: usize, outer_steps: usize, t_max: usize) -> Self {
        CompMagnitudeLog {
            buckets,
            outer_steps,
            t_max,
            sums: vec![[0.0; TIME_DECILES]; buckets],
            counts: vec![[0; TIME_DECILES]; buckets],
        }
    }

    pub fn bucket_of(&self, step: usize) -> usize {
        (step * self.buckets / self.outer_steps).min(self.buckets - 1)
    }

    pub fn decile_of(&self, t: usize) -> usize {
        ((t - 1) * TIME_DECILES / self.t_max).min(TIME_DECILES - 1)
    }

    pub fn record(&mut self, step: usize, t: usize, norm: f64) {
        let (b, k) = (self.bucket_of(step), self.decile_of(t));
        self.sums[b][k] += norm;
        self.counts[b][k] += 1;
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|c| c.iter().all(|&n| n == 0))
    }

    /// Populated cells in (bucket, decile) order.
    pub fn rows(&self) -> Vec<MagnitudeRow> {
        let mut out = Vec::new();
        for b in 0..self.buckets {
            for k in 0..TIME_DECILES {
                if self.counts[b][k] > 0 {
                    out.push(MagnitudeRow {
                        bucket: b,
                        decile: k,
                        mean_norm: self.sums[b][k] / self.counts[b][k] as f64,
                    });
                }
            }
        }
        out
    }

    /// Sample-weighted mean per bucket (`None` for empty buckets).
    pub fn bucket_means(&self) -> Vec<Option<f64>> {
        self.sums
            .iter()
            .zip(&self.counts)
            .map(|(s, c)| {
                let n: u64 = c.iter().sum();
                (n > 0).then(|| s.iter().sum::<f64>() / n as f64)
            })
            .collect()
    }
}

/// One line of the loss log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub denoiser_loss: f64,
    pub comp_loss: Option<f64>,
    pub swd_eval: Option<f64>,
    pub wallclock_s: f64,
}

/// Per-sample draws shared by the two training steps.
struct NoisedBatch {
    ts: Vec<usize>,
    eps: Matrix,
    x_t: Matrix,
}

fn noised_batch(batch_x0: &Matrix, s: &NoiseSchedule, rng: &mut Rng) -> NoisedBatch {
    use rand::Rng as _;
    let (n, d) = batch_x0.dim();
    let mut ts = Vec::with_capacity(n);
    let mut eps = Matrix::zeros((n, d));
    let mut x_t = Matrix::zeros((n, d));
    for i in 0..n {
        let t = rng.gen_range(1..=s.t_max());
        ts.push(t);
        let (g, f) = (s.g(t), s.f(t));
        for j in 0..d {
            let e = rng::normal(rng);
            eps[[i, j]] = e;
            x_t[[i, j]] = g * batch_x0[[i, j]] + f * e;
        }
    }
    NoisedBatch { ts, eps, x_t }
}

/// One Adam step on `mean ‖ε_θ(x_t, t) − ε‖²` with per-sample `t` and `ε`.
pub fn denoiser_train_step(
    params: &mut MlpParams,
    state: &mut AdamState,
    embedding: &TimeEmbedding,
    batch_x0: &Matrix,
    s: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<f64> {
    if batch_x0.nrows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let nb = noised_batch(batch_x0, s, rng);
    let inputs = conditioned_input_mixed(nb.x_t.view(), &nb.ts, s.t_max(), embedding);
    let (loss, grads) = mlp_grad(params, &inputs, &nb.eps, Loss::MeanSquared)?;
    adam_step(params, &grads, state)?;
    Ok(loss)
}

/// Result of one inner compensation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CompStepOutput {
    /// Mean-absolute loss before the first inner update.
    pub loss: f64,
    /// `(t, ‖c*‖₂)` for every sample of the batch.
    pub magnitudes: Vec<(usize, f64)>,
}

/// Targets `c* = w(t)·(x̂0 − x0)` for a batch, with `x̂0` from the frozen
/// denoiser. Returns the draws' times, the `[x̂0 ‖ embed(t)]` inputs and the
/// targets.
pub fn compensation_targets(
    batch_x0: &Matrix,
    denoiser: &DenoiserHandle,
    comp_embedding: &TimeEmbedding,
    s: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Matrix, Matrix)> {
    let nb = noised_batch(batch_x0, s, rng);
    let (n, d) = batch_x0.dim();
    let eps_hat = match denoiser {
        DenoiserHandle::Trained { params, embedding } => {
            params.forward_batch(conditioned_input_mixed(nb.x_t.view(), &nb.ts, s.t_max(), embedding).view())
        }
        other => {
            let mut out = Matrix::zeros((n, d));
            for (i, &t) in nb.ts.iter().enumerate() {
                let row = other.predict_eps_batch(nb.x_t.slice(ndarray::s![i..i + 1, ..]), t, s)?;
                out.row_mut(i).assign(&row.row(0));
            }
            out
        }
    };
    let mut x0_hat = Matrix::zeros((n, d));
    let mut targets = Matrix::zeros((n, d));
    for (i, &t) in nb.ts.iter().enumerate() {
        let (g, f, w) = (s.g(t), s.f(t), s.w(t));
        for j in 0..d {
            let xh = (nb.x_t[[i, j]] - f * eps_hat[[i, j]]) / g;
            x0_hat[[i, j]] = xh;
            targets[[i, j]] = w * (xh - batch_x0[[i, j]]);
        }
    }
    let inputs = conditioned_input_mixed(x0_hat.view(), &nb.ts, s.t_max(), comp_embedding);
    Ok((nb.ts, inputs, targets))
}

/// `K` Adam steps of the compensation module on mean-absolute error against
/// `w(t)·(x̂0 − x0)`. The denoiser is only read.
#[allow(clippy::too_many_arguments)]
pub fn comp_train_inner(
    params: &mut MlpParams,
    state: &mut AdamState,
    comp_embedding: &TimeEmbedding,
    batch_x0: &Matrix,
    denoiser: &DenoiserHandle,
    s: &NoiseSchedule,
    k: usize,
    rng: &mut Rng,
) -> Result<CompStepOutput> {
    if batch_x0.nrows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let (ts, inputs, targets) = compensation_targets(batch_x0, denoiser, comp_embedding, s, rng)?;
    let magnitudes = ts
        .iter()
        .zip(targets.axis_iter(Axis(0)))
        .map(|(&t, row)| (t, row.iter().map(|v| v * v).sum::<f64>().sqrt()))
        .collect();
    let (loss, grads) = mlp_grad(params, &inputs, &targets, Loss::MeanAbsolute)?;
    if k > 0 {
        adam_step(params, &grads, state)?;
        for _ in 1..k {
            let (_, grads) = mlp_grad(params, &inputs, &targets, Loss::MeanAbsolute)?;
            adam_step(params, &grads, state)?;
        }
    }
    Ok(CompStepOutput { loss, magnitudes })
}

/// Mutable training state for one run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub schedule: NoiseSchedule,
    pub dataset: Dataset,
    pub embedding: TimeEmbedding,
    pub denoiser: MlpParams,
    pub denoiser_state: AdamState,
    pub comp: Option<(MlpParams, AdamState)>,
    pub magnitudes: CompMagnitudeLog,
    pub history: Vec<StepRecord>,
    pub evals: Vec<(usize, MetricReport)>,
    step: usize,
    started: Instant,
    reference: Option<Matrix>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.schedule()?;
        let dataset = Dataset::new(cfg.dataset.clone())?;
        let d = dataset.dim();
        let embedding = TimeEmbedding::new(cfg.embedding_dim)?;
        let denoiser = mlp_init(
            &cfg.denoiser_dims(d),
            cfg.activation,
            rng::derive_seed(cfg.seed, rng::tag::INIT, 0),
        )?;
        let denoiser_state = AdamState::new(&denoiser, AdamConfig::with_lr(cfg.lr_denoiser));
        let comp = if cfg.comp_enabled {
            let mut p = mlp_init(
                &cfg.comp_dims(d),
                cfg.activation,
                rng::derive_seed(cfg.seed, rng::tag::INIT, 1),
            )?;
            p.zero_output_layer();
            let st = AdamState::new(&p, AdamConfig::with_lr(cfg.lr_comp));
            Some((p, st))
        } else {
            None
        };
        let magnitudes = CompMagnitudeLog::new(cfg.magnitude_buckets, cfg.outer_steps, cfg.t_max);
        Ok(Trainer {
            cfg,
            schedule,
            dataset,
            embedding,
            denoiser,
            denoiser_state,
            comp,
            magnitudes,
            history: Vec::new(),
            evals: Vec::new(),
            step: 0,
            started: Instant::now(),
            reference: None,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.outer_steps
    }

    pub fn denoiser_handle(&self) -> DenoiserHandle {
        DenoiserHandle::Trained {
            params: self.denoiser.clone(),
            embedding: self.embedding,
        }
    }

    pub fn comp_handle(&self) -> Option<CompensationHandle> {
        self.comp.as_ref().map(|(p, _)| CompensationHandle {
            params: p.clone(),
            embedding: self.embedding,
            enabled_at_inference: self.cfg.comp_at_inference,
        })
    }

    fn elapsed(&self) -> f64 {
        if self.cfg.record_wallclock {
            self.started.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }

    /// One outer step: denoiser update, then the compensation inner loop.
    pub fn step(&mut self) -> Result<&StepRecord> {
        let step = self.step;
        let seed = self.cfg.seed;
        let batch = self.dataset.sample(
            self.cfg.batch_size,
            rng::derive_seed(seed, rng::tag::DENOISER_BATCH, step as u64),
        )?;
        let mut r = rng::stream(seed, rng::tag::DENOISER_NOISE, step as u64);
        let loss = denoiser_train_step(
            &mut self.denoiser,
            &mut self.denoiser_state,
            &self.embedding,
            &batch,
            &self.schedule,
            &mut r,
        )?;
        if !loss.is_finite() || !self.denoiser.is_finite() {
            return Err(Error::NonFinite { step });
        }
        let mut comp_loss = None;
        let frozen = self.comp.is_some().then(|| self.denoiser_handle());
        if let (Some(frozen), Some((p, st))) = (frozen, self.comp.as_mut()) {
            let mut r = rng::stream(seed, rng::tag::COMP_NOISE, step as u64);
            let out = comp_train_inner(
                p,
                st,
                &self.embedding,
                &batch,
                &frozen,
                &self.schedule,
                self.cfg.comp_inner_iters,
                &mut r,
            )?;
            if !out.loss.is_finite() || !p.is_finite() {
                return Err(Error::NonFinite { step });
            }
            for (t, m) in out.magnitudes {
                self.magnitudes.record(step, t, m);
            }
            comp_loss = Some(out.loss);
        }
        self.step += 1;
        let wallclock_s = self.elapsed();
        self.history.push(StepRecord {
            step: self.step,
            denoiser_loss: loss,
            comp_loss,
            swd_eval: None,
            wallclock_s,
        });
        Ok(self.history.last().expect("pushed"))
    }

    pub fn should_eval(&self) -> bool {
        let every = self.cfg.eval_every;
        self.is_done() || (every > 0 && self.step > 0 && self.step.is_multiple_of(every))
    }

    /// Sampler used for evaluation snapshots: σ = 0 on the full grid, with the
    /// learned compensation when enabled.
    pub fn eval_sampler(&self) -> SamplerParams {
        let rule = if self.comp.is_some() {
            Rule::CompLearned
        } else {
            Rule::Ddim
        };
        let mut sp = SamplerParams::new(rule, full_grid(self.cfg.t_max));
        sp.use_comp_at_inference = self.cfg.comp_at_inference;
        sp
    }

    /// Generates `eval_samples` points with the evaluation sampler and scores
    /// them against a fixed real reference set; the result is logged.
    pub fn evaluate(&mut self) -> Result<MetricReport> {
        let sp = self.eval_sampler();
        let report = self.score(&sp)?;
        if let Some(last) = self.history.last_mut() {
            last.swd_eval = Some(report.swd);
            last.wallclock_s = if self.cfg.record_wallclock {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            };
        }
        self.evals.push((self.step, report.clone()));
        Ok(report)
    }

    /// Scores the current networks under an arbitrary sampler, using the same
    /// reference set, generation seed and projections as [`Trainer::evaluate`].
    /// Nothing is logged.
    pub fn score(&mut self, sp: &SamplerParams) -> Result<MetricReport> {
        let n = self.cfg.eval_samples;
        let seed = self.cfg.seed;
        if self.reference.is_none() {
            self.reference = Some(self.dataset.sample(n, rng::derive_seed(seed, rng::tag::EVAL, 0))?);
        }
        let h = self.denoiser_handle();
        let c = self.comp_handle();
        let gen = generate(
            &h,
            c.as_ref(),
            sp,
            &self.schedule,
            n,
            self.dataset.dim(),
            rng::derive_seed(seed, rng::tag::EVAL, 1),
            false,
        )?
        .samples;
        let real = self.reference.as_ref().expect("set above");
        metrics::evaluate(
            real,
            &gen,
            self.cfg.eval_projections,
            self.cfg.eval_k,
            rng::derive_seed(seed, rng::tag::EVAL, 2),
        )
    }

    pub fn generate_samples(&self, n: usize, seed: u64) -> Result<Matrix> {
        let h = self.denoiser_handle();
        let c = self.comp_handle();
        let sp = self.eval_sampler();
        Ok(generate(&h, c.as_ref(), &sp, &self.schedule, n, self.dataset.dim(), seed, false)?.samples)
    }

    /// Runs every remaining outer step with periodic evaluation.
    pub fn run(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step()?;
            if self.should_eval() {
                self.evaluate()?;
            }
        }
        Ok(())
    }
}

/// Everything a finished run produces, minus file output.
pub struct TrainOutcome {
    pub denoiser: (MlpParams, AdamState),
    pub comp: Option<(MlpParams, AdamState)>,
    pub magnitudes: CompMagnitudeLog,
    pub history: Vec<StepRecord>,
    pub evals: Vec<(usize, MetricReport)>,
}

pub fn train_run(cfg: TrainConfig) -> Result<TrainOutcome> {
    let mut tr = Trainer::new(cfg)?;
    tr.run()?;
    Ok(TrainOutcome {
        denoiser: (tr.denoiser, tr.denoiser_state),
        comp: tr.comp,
        magnitudes: tr.magnitudes,
        history: tr.history,
        evals: tr.evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> TrainConfig {
        let mut c = TrainConfig::new(20);
        c.batch_size = 32;
        c.outer_steps = 12;
        c.eval_every = 0;
        c.eval_samples = 64;
        c.eval_projections = 16;
        c.denoiser_hidden = vec![16, 16];
        c.comp_hidden = vec![8];
        c.magnitude_buckets = 3;
        c
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::new(100);
        assert_eq!(c.comp_inner_iters, 1);
        assert_eq!(c.denoiser_dims(2), vec![18, 128, 128, 128, 2]);
        assert_eq!(c.comp_dims(2), vec![18, 64, 64, 2]);
        assert!(c.validate().is_ok());
        let mut bad = c.clone();
        bad.batch_size = 0;
        assert!(matches!(bad.validate(), Err(Error::Config(m)) if m.contains("batch_size")));
        let err = serde_json::from_str::<TrainConfig>(r#"{"t_max": 10, "bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let err = serde_json::from_str::<TrainConfig>(r#"{"seed": 1}"#).unwrap_err();
        assert!(err.to_string().contains("t_max"));
    }

    #[test]
    fn magnitude_log_binning() {
        let mut log = CompMagnitudeLog::new(4, 100, 100);
        assert_eq!(log.bucket_of(0), 0);
        assert_eq!(log.bucket_of(99), 3);
        assert_eq!(log.decile_of(1), 0);
        assert_eq!(log.decile_of(100), 9);
        assert!(log.is_empty());
        log.record(10, 5, 2.0);
        log.record(10, 7, 4.0);
        log.record(80, 95, 1.0);
        let rows = log.rows();
        assert_eq!(rows.len(), 2);
        assert_eq!(
            rows[0],
            MagnitudeRow {
                bucket: 0,
                decile: 0,
                mean_norm: 3.0
            }
        );
        assert_eq!(log.bucket_means(), vec![Some(3.0), None, None, Some(1.0)]);
    }

    #[test]
    fn logged_magnitudes_match_recomputation() {
        let s = NoiseSchedule::default_linear(50).unwrap();
        let h = DenoiserHandle::gaussian_oracle(vec![0.0, 0.0], 1.0).unwrap();
        let e = TimeEmbedding::default();
        let x0 = crate::data::dataset_sample(&DatasetSpec::standard_gaussian(2), 64, 1).unwrap();
        let mut p = mlp_init(&[18, 8, 2], Activation::Silu, 0).unwrap();
        let mut st = AdamState::new(&p, AdamConfig::default());
        let out = comp_train_inner(&mut p, &mut st, &e, &x0, &h, &s, 1, &mut rng::stream(3, 0, 0)).unwrap();
        // Independent recomputation from the same draws.
        let nb = noised_batch(&x0, &s, &mut rng::stream(3, 0, 0));
        for (i, &(t, m)) in out.magnitudes.iter().enumerate() {
            assert_eq!(t, nb.ts[i]);
            let xt = nb.x_t.row(i).to_vec();
            let xh = crate::denoisers::predict_x0(&h, &xt, t, &s).unwrap();
            let diff: f64 = xh
                .iter()
                .zip(x0.row(i))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((m - s.w(t).abs() * diff).abs() < 1e-12);
        }
    }

    #[test]
    fn k_zero_leaves_module_untouched() {
        let s = NoiseSchedule::default_linear(10).unwrap();
        let h = DenoiserHandle::gaussian_oracle(vec![0.0, 0.0], 1.0).unwrap();
        let e = TimeEmbedding::default();
        let x0 = crate::data::dataset_sample(&DatasetSpec::standard_gaussian(2), 16, 1).unwrap();
        let mut p = mlp_init(&[18, 8, 2], Activation::Silu, 0).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&p, AdamConfig::default());
        let out = comp_train_inner(&mut p, &mut st, &e, &x0, &h, &s, 0, &mut rng::stream(3, 0, 0)).unwrap();
        assert!(out.loss > 0.0);
        assert_eq!(p, before);
        assert_eq!(st.step_count, 0);
        assert!(comp_train_inner(
            &mut p,
            &mut st,
            &e,
            &Matrix::zeros((0, 2)),
            &h,
            &s,
            1,
            &mut rng::stream(3, 0, 0)
        )
        .is_err());
    }

    #[test]
    fn runs_are_deterministic() {
        let a = train_run(small_cfg()).unwrap();
        let b = train_run(small_cfg()).unwrap();
        assert_eq!(a.denoiser, b.denoiser);
        assert_eq!(a.comp, b.comp);
        assert_eq!(a.history, b.history);
        assert_eq!(a.evals.len(), 1);
    }

    #[test]
    fn disabling_compensation_keeps_denoiser_trajectory() {
        let with = train_run(small_cfg()).unwrap();
        let mut cfg = small_cfg();
        cfg.comp_enabled = false;
        let without = train_run(cfg).unwrap();
        assert_eq!(with.denoiser, without.denoiser);
        let la: Vec<f64> = with.history.iter().map(|r| r.denoiser_loss).collect();
        let lb: Vec<f64> = without.history.iter().map(|r| r.denoiser_loss).collect();
        assert_eq!(la, lb);
        assert!(without.comp.is_none());
        assert!(without.magnitudes.is_empty());
    }
}
