//! Experiment drivers. Each writes its artifacts and a manifest into a
//! caller-chosen directory and returns a summary for programmatic checks.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{Dataset, DatasetSpec};
use crate::denoisers::{CompensationHandle, DenoiserHandle};
use crate::error::{Error, Result};
use crate::harness::config::{AblateConfig, RaceConfig, SweepConfig, TraceConfig};
use crate::harness::csv::{self, AblateRow, RaceRow, TraceRow};
use crate::harness::manifest::RunManifest;
use crate::harness::svg::{emit_svg, PlotLabels, Series};
use crate::metrics::{self, MetricReport};
use crate::nn::{load_checkpoint_expecting, save_checkpoint, TimeEmbedding};
use crate::rng;
use crate::samplers::{full_grid, generate, strided_grid, trace_deviation, Rule, SamplerParams};
use crate::schedule::NoiseSchedule;
use crate::training::{CompMagnitudeLog, TrainConfig, Trainer};

/// Median of the values; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or there are fewer than two points.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Spearman correlation between bucket index and mean `‖c*‖`, ignoring the
/// buckets that start inside the first 10% of training.
pub fn magnitude_trend(log: &CompMagnitudeLog) -> Option<f64> {
    let burn_in = log.outer_steps.div_ceil(10);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (b, m) in log.bucket_means().into_iter().enumerate() {
        let start = b * log.outer_steps / log.buckets;
        if let (true, Some(m)) = (start >= burn_in, m) {
            xs.push(b as f64);
            ys.push(m);
        }
    }
    spearman(&xs, &ys)
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn put(dir: &Path, m: &mut RunManifest, name: &str, text: &str) -> Result<()> {
    csv::write_text(&dir.join(name), text)?;
    m.add_artifact(name);
    Ok(())
}

fn write_json(dir: &Path, m: &mut RunManifest, name: &str, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("plain data serialises") + "\n";
    put(dir, m, name, &text)
}

/// Trains with periodic evaluation.
pub fn train_arm(cfg: &TrainConfig) -> Result<Trainer> {
    let mut tr = Trainer::new(cfg.clone())?;
    tr.run()?;
    Ok(tr)
}

#[derive(Debug, Clone, Serialize)]
struct EvalLine<'a> {
    step: usize,
    #[serde(flatten)]
    report: &'a MetricReport,
}

/// `train`: checkpoints, loss log, magnitude trace and evaluation snapshots.
pub fn run_train(cfg: &TrainConfig, dir: &Path) -> Result<(Trainer, RunManifest)> {
    cfg.validate()?;
    prepare_dir(dir)?;
    let mut m = RunManifest::new("train", cfg, cfg.seed, Some(&cfg.schedule()?))?;
    let tr = train_arm(cfg)?;
    save_checkpoint(&tr.denoiser, &tr.denoiser_state, dir.join("denoiser.ckpt"))?;
    m.add_artifact("denoiser.ckpt");
    if let Some((p, st)) = &tr.comp {
        save_checkpoint(p, st, dir.join("comp.ckpt"))?;
        m.add_artifact("comp.ckpt");
        if !tr.magnitudes.is_empty() {
            put(
                dir,
                &mut m,
                "magnitudes.csv",
                &csv::comp_magnitude_trace(&tr.magnitudes)?,
            )?;
        }
    }
    put(dir, &mut m, "loss.csv", &csv::loss_csv(&tr.history))?;
    let lines: String = tr
        .evals
        .iter()
        .map(|(step, report)| serde_json::to_string(&EvalLine { step: *step, report }).expect("serialises") + "\n")
        .collect();
    put(dir, &mut m, "metrics.jsonl", &lines)?;
    m.write(dir)?;
    Ok((tr, m))
}

/// Everything `sample` needs besides the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub config: TrainConfig,
    pub denoiser: PathBuf,
    pub comp: Option<PathBuf>,
    pub rule: Rule,
    pub eta: f64,
    /// Number of denoiser calls; `None` means the full grid.
    pub nfe: Option<usize>,
    pub use_comp_at_inference: bool,
    pub n: usize,
    pub seed: u64,
}

pub fn load_handles(
    cfg: &TrainConfig,
    denoiser: &Path,
    comp: Option<&Path>,
) -> Result<(DenoiserHandle, Option<CompensationHandle>)> {
    cfg.validate()?;
    let d = cfg.dataset.dim();
    let embedding = TimeEmbedding::new(cfg.embedding_dim)?;
    let (p, _) = load_checkpoint_expecting(denoiser, &cfg.denoiser_dims(d))?;
    let h = DenoiserHandle::trained(p, embedding)?;
    let c = match comp {
        Some(path) => {
            let (p, _) = load_checkpoint_expecting(path, &cfg.comp_dims(d))?;
            Some(CompensationHandle::new(p, embedding, true)?)
        }
        None => None,
    };
    Ok((h, c))
}

/// `sample`: `n × d` samples in normalised data coordinates.
pub fn run_sample(req: &SampleRequest, dir: &Path) -> Result<RunManifest> {
    let s = req.config.schedule()?;
    let grid = match req.nfe {
        Some(k) => strided_grid(s.t_max(), k)?,
        None => full_grid(s.t_max()),
    };
    let mut sp = SamplerParams::new(req.rule, grid);
    sp.eta = req.eta;
    sp.use_comp_at_inference = req.use_comp_at_inference;
    sp.validate(&s)?;
    if req.rule == Rule::CompLearned && req.comp.is_none() {
        return Err(Error::invalid("comp-learned needs a compensation checkpoint"));
    }
    let (h, c) = load_handles(&req.config, &req.denoiser, req.comp.as_deref())?;
    prepare_dir(dir)?;
    let mut m = RunManifest::new("sample", req, req.seed, Some(&s))?;
    let gen = generate(
        &h,
        c.as_ref(),
        &sp,
        &s,
        req.n,
        req.config.dataset.dim(),
        req.seed,
        false,
    )?;
    put(dir, &mut m, "samples.csv", &csv::samples_csv(&gen.samples))?;
    m.set_extra("time_grid", &sp.time_grid);
    m.set_extra("nfe", sp.steps().len());
    m.write(dir)?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub dataset: DatasetSpec,
    pub samples: PathBuf,
    pub projections: usize,
    pub k: usize,
    pub seed: u64,
}

/// `eval`: scores a sample CSV against a fresh draw of the same size.
pub fn run_eval(req: &EvalRequest, dir: &Path) -> Result<(MetricReport, RunManifest)> {
    let text = fs::read_to_string(&req.samples).map_err(|e| Error::io(&req.samples, e))?;
    let gen = csv::parse_samples_csv(&text)?;
    let data = Dataset::new(req.dataset.clone())?;
    if gen.ncols() != data.dim() {
        return Err(Error::invalid(format!(
            "samples have {} columns but the dataset has dimension {}",
            gen.ncols(),
            data.dim()
        )));
    }
    let real = data.sample(gen.nrows(), rng::derive_seed(req.seed, rng::tag::EVAL, 0))?;
    let mut report = metrics::evaluate(&real, &gen, req.projections, req.k, req.seed)?;
    if let Some((mu, var)) = data.gaussian_moments() {
        let (gm, gv) = metrics::diag_moments(&gen);
        report.w2_analytic = Some(metrics::gaussian_w2(&gm, &gv, &mu, &var)?);
    }
    prepare_dir(dir)?;
    let mut m = RunManifest::new("eval", req, req.seed, None)?;
    write_json(dir, &mut m, "metrics.json", &report)?;
    m.write(dir)?;
    Ok((report, m))
}

pub fn run_schedule_dump(s: &NoiseSchedule, config: &Value, dir: &Path) -> Result<RunManifest> {
    prepare_dir(dir)?;
    let mut m = RunManifest::new("schedule-dump", config, 0, Some(s))?;
    put(dir, &mut m, "schedule.csv", &csv::schedule_csv(s))?;
    m.write(dir)?;
    Ok(m)
}

pub fn run_data_dump(spec: &DatasetSpec, n: usize, seed: u64, dir: &Path) -> Result<RunManifest> {
    let data = Dataset::new(spec.clone())?;
    let x = data.sample(n, seed)?;
    prepare_dir(dir)?;
    let echo = serde_json::json!({ "dataset": spec, "n": n, "seed": seed });
    let mut m = RunManifest::new("data-dump", &echo, seed, None)?;
    put(dir, &mut m, "data.csv", &csv::samples_csv(&x))?;
    m.write(dir)?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RaceSeed {
    pub seed: u64,
    pub baseline_final_swd: f64,
    /// First evaluation step at which the baseline reaches its own final SWD.
    pub baseline_first_step: usize,
    /// First evaluation step at which the compensated arm reaches the
    /// baseline's final SWD.
    pub compensated_first_step: Option<usize>,
    /// `compensated_first_step / outer_steps`, infinite if never reached.
    pub step_ratio: f64,
    pub magnitude_spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RaceSummary {
    pub outer_steps: usize,
    pub seeds: Vec<RaceSeed>,
    pub median_step_ratio: f64,
    pub median_magnitude_spearman: Option<f64>,
}

fn eval_curve(tr: &Trainer) -> Vec<(usize, f64, f64)> {
    tr.history
        .iter()
        .filter_map(|r| r.swd_eval.map(|swd| (r.step, r.wallclock_s, swd)))
        .collect()
}

fn first_reaching(curve: &[(usize, f64, f64)], target: f64) -> Option<usize> {
    curve
        .iter()
        .find(|&&(_, _, swd)| swd <= target)
        .map(|&(step, _, _)| step)
}

/// `race`: both arms per seed under one budget, with the step at which each
/// first reaches the baseline's final SWD.
pub fn run_race(rc: &RaceConfig, dir: &Path) -> Result<RaceSummary> {
    rc.validate()?;
    prepare_dir(dir)?;
    let mut m = RunManifest::new("race", rc, rc.seeds[0], None)?;
    let mut rows = Vec::new();
    let mut seeds = Vec::new();
    let mut series = Vec::new();
    let mut fig7 = Vec::new();
    let mut xs = Vec::new();
    for &seed in &rc.seeds {
        let base = train_arm(&rc.arm(&rc.baseline, seed))?;
        let comp = train_arm(&rc.arm(&rc.compensated, seed))?;
        let (bc, cc) = (eval_curve(&base), eval_curve(&comp));
        let target = bc.last().expect("at least one evaluation").2;
        let baseline_first_step = first_reaching(&bc, target).expect("final evaluation reaches itself");
        let compensated_first_step = first_reaching(&cc, target);
        let step_ratio = compensated_first_step.map_or(f64::INFINITY, |s| s as f64 / rc.outer_steps as f64);
        let magnitude_spearman = magnitude_trend(&comp.magnitudes);
        if !comp.magnitudes.is_empty() {
            let name = format!("magnitudes_seed{seed}.csv");
            put(dir, &mut m, &name, &csv::comp_magnitude_trace(&comp.magnitudes)?)?;
            let means: Vec<f64> = comp
                .magnitudes
                .bucket_means()
                .into_iter()
                .map(|v| v.unwrap_or(0.0))
                .collect();
            fig7.push(Series::new(format!("seed {seed}"), means));
        }
        for (arm, curve) in [("baseline", &bc), ("compensated", &cc)] {
            for &(step, wallclock_s, swd) in curve.iter() {
                rows.push(RaceRow {
                    arm: arm.to_string(),
                    seed,
                    step,
                    wallclock_s,
                    swd,
                });
            }
            series.push(Series::new(
                format!("{arm} s{seed}"),
                curve.iter().map(|c| c.2).collect(),
            ));
        }
        xs = bc.iter().map(|c| c.0 as f64).collect();
        seeds.push(RaceSeed {
            seed,
            baseline_final_swd: target,
            baseline_first_step,
            compensated_first_step,
            step_ratio,
            magnitude_spearman,
        });
    }
    let ratios: Vec<f64> = seeds.iter().map(|s| s.step_ratio).collect();
    let rhos: Vec<f64> = seeds.iter().filter_map(|s| s.magnitude_spearman).collect();
    let summary = RaceSummary {
        outer_steps: rc.outer_steps,
        median_step_ratio: median(&ratios),
        median_magnitude_spearman: (!rhos.is_empty()).then(|| median(&rhos)),
        seeds,
    };
    put(dir, &mut m, "race.csv", &csv::race_csv(&rows))?;
    let labels = PlotLabels {
        title: "Sliced Wasserstein distance during training".into(),
        x: "outer step".into(),
        y: "SWD".into(),
    };
    put(dir, &mut m, "race.svg", &emit_svg(&xs, &series, &labels, true)?)?;
    if let Some(first) = fig7.first() {
        let bx: Vec<f64> = (0..first.ys.len()).map(|b| b as f64).collect();
        let labels = PlotLabels {
            title: "Mean compensation target norm per training bucket".into(),
            x: "bucket".into(),
            y: "mean norm".into(),
        };
        put(dir, &mut m, "fig7.svg", &emit_svg(&bx, &fig7, &labels, false)?)?;
    }
    write_json(dir, &mut m, "summary.json", &summary)?;
    m.write(dir)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblateSummary {
    /// Per-K medians over seeds.
    pub rows: Vec<AblateRowSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblateRowSummary {
    pub k: usize,
    pub swd: f64,
    pub precision: f64,
    pub recall: f64,
}

/// `ablate-k`: one run per inner-iteration count and seed; the table holds
/// medians over seeds of the final evaluation.
pub fn run_ablate_k(ac: &AblateConfig, dir: &Path) -> Result<AblateSummary> {
    ac.validate()?;
    prepare_dir(dir)?;
    let mut m = RunManifest::new("ablate-k", ac, ac.seeds[0], Some(&ac.base.schedule()?))?;
    let mut runs = Vec::new();
    let mut table = Vec::new();
    for &k in &ac.k_values {
        let mut reports = Vec::new();
        for &seed in &ac.seeds {
            let mut cfg = ac.base.clone();
            cfg.comp_inner_iters = k;
            cfg.seed = seed;
            let tr = train_arm(&cfg)?;
            let (_, r) = tr.evals.last().cloned().expect("final evaluation");
            runs.push(vec![
                k.to_string(),
                seed.to_string(),
                csv::fmt_f64(r.swd),
                csv::fmt_f64(r.precision),
                csv::fmt_f64(r.recall),
            ]);
            reports.push(r);
        }
        let pick = |f: fn(&MetricReport) -> f64| median(&reports.iter().map(f).collect::<Vec<_>>());
        table.push(AblateRowSummary {
            k,
            swd: pick(|r| r.swd),
            precision: pick(|r| r.precision),
            recall: pick(|r| r.recall),
        });
    }
    let rows: Vec<AblateRow> = table
        .iter()
        .map(|r| AblateRow {
            k: r.k,
            swd: r.swd,
            precision: r.precision,
            recall: r.recall,
        })
        .collect();
    put(dir, &mut m, "ablate_k.csv", &csv::ablate_csv(&rows))?;
    put(
        dir,
        &mut m,
        "ablate_k_runs.csv",
        &csv::table(&["K", "seed", "swd", "precision", "recall"], runs),
    )?;
    m.write(dir)?;
    Ok(AblateSummary { rows: table })
}

/// Arms of the role-of-term ablation, in table order.
pub const ROLE_ARMS: [&str; 4] = ["ddim", "cold", "cs-train-only", "cs"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoleSummary {
    /// `(arm, per-seed final SWD)` in [`ROLE_ARMS`] order.
    pub arms: Vec<(String, Vec<f64>)>,
    pub medians: Vec<(String, f64)>,
}

impl RoleSummary {
    pub fn median_of(&self, arm: &str) -> Option<f64> {
        self.medians.iter().find(|(a, _)| a == arm).map(|&(_, v)| v)
    }
}

/// `role-of-term`: a plain run sampled with DDIM and with the Cold rule, and a
/// compensated run sampled without and with the learned term.
pub fn run_role_of_term(rc: &SweepConfig, dir: &Path) -> Result<RoleSummary> {
    rc.validate()?;
    prepare_dir(dir)?;
    let mut m = RunManifest::new("role-of-term", rc, rc.seeds[0], Some(&rc.base.schedule()?))?;
    let grid = full_grid(rc.base.t_max);
    let mut swd: Vec<Vec<f64>> = vec![Vec::new(); ROLE_ARMS.len()];
    let mut rows = Vec::new();
    for &seed in &rc.seeds {
        let mut plain = rc.base.clone();
        plain.seed = seed;
        plain.comp_enabled = false;
        plain.eval_every = 0;
        let mut with_comp = plain.clone();
        with_comp.comp_enabled = true;
        with_comp.comp_at_inference = true;

        let mut a = Trainer::new(plain)?;
        while !a.is_done() {
            a.step()?;
        }
        let mut b = Trainer::new(with_comp)?;
        while !b.is_done() {
            b.step()?;
        }
        let ddim = SamplerParams::new(Rule::Ddim, grid.clone());
        let cold = SamplerParams::new(Rule::Cold, grid.clone());
        let cs = SamplerParams::new(Rule::CompLearned, grid.clone());
        let reports = [a.score(&ddim)?, a.score(&cold)?, b.score(&ddim)?, b.score(&cs)?];
        for (i, r) in reports.iter().enumerate() {
            swd[i].push(r.swd);
            rows.push(vec![
                ROLE_ARMS[i].to_string(),
                seed.to_string(),
                csv::fmt_f64(r.swd),
                csv::fmt_f64(r.precision),
                csv::fmt_f64(r.recall),
            ]);
        }
    }
    let summary = RoleSummary {
        medians: ROLE_ARMS
            .iter()
            .zip(&swd)
            .map(|(a, v)| (a.to_string(), median(v)))
            .collect(),
        arms: ROLE_ARMS.iter().zip(swd).map(|(a, v)| (a.to_string(), v)).collect(),
    };
    put(
        dir,
        &mut m,
        "role_of_term.csv",
        &csv::table(&["arm", "seed", "swd", "precision", "recall"], rows),
    )?;
    let med_rows = summary.medians.iter().map(|(a, v)| vec![a.clone(), csv::fmt_f64(*v)]);
    put(
        dir,
        &mut m,
        "role_of_term_medians.csv",
        &csv::table(&["arm", "median_swd"], med_rows),
    )?;
    m.write(dir)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig7Summary {
    pub seeds: Vec<(u64, Option<f64>)>,
    pub median_spearman: Option<f64>,
}

/// `fig7`: compensation-target magnitude per training bucket.
pub fn run_fig7(rc: &SweepConfig, dir: &Path) -> Result<Fig7Summary> {
    rc.validate()?;
    if !rc.base.comp_enabled || rc.base.comp_inner_iters == 0 {
        return Err(Error::Config(
            "`base.comp_enabled` must be true with `comp_inner_iters` ≥ 1".into(),
        ));
    }
    prepare_dir(dir)?;
    let mut m = RunManifest::new("fig7", rc, rc.seeds[0], Some(&rc.base.schedule()?))?;
    let mut seeds = Vec::new();
    let mut series = Vec::new();
    for &seed in &rc.seeds {
        let mut cfg = rc.base.clone();
        cfg.seed = seed;
        cfg.eval_every = 0;
        let mut tr = Trainer::new(cfg)?;
        while !tr.is_done() {
            tr.step()?;
        }
        put(
            dir,
            &mut m,
            &format!("magnitudes_seed{seed}.csv"),
            &csv::comp_magnitude_trace(&tr.magnitudes)?,
        )?;
        series.push(Series::new(
            format!("seed {seed}"),
            tr.magnitudes
                .bucket_means()
                .into_iter()
                .map(|v| v.unwrap_or(0.0))
                .collect(),
        ));
        seeds.push((seed, magnitude_trend(&tr.magnitudes)));
    }
    let rhos: Vec<f64> = seeds.iter().filter_map(|s| s.1).collect();
    let summary = Fig7Summary {
        median_spearman: (!rhos.is_empty()).then(|| median(&rhos)),
        seeds,
    };
    let xs: Vec<f64> = (0..rc.base.magnitude_buckets).map(|b| b as f64).collect();
    let labels = PlotLabels {
        title: "Mean compensation target norm per training bucket".into(),
        x: "bucket".into(),
        y: "mean norm".into(),
    };
    put(dir, &mut m, "fig7.svg", &emit_svg(&xs, &series, &labels, false)?)?;
    write_json(dir, &mut m, "summary.json", &summary)?;
    m.write(dir)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceCurve {
    pub rule: Rule,
    pub times: Vec<usize>,
    pub deviations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub curves: Vec<TraceCurve>,
    /// `|g(0) − g(T)|·‖b‖`, the terminal deviation of the Cold rule.
    pub cold_closed_form: f64,
}

impl TraceSummary {
    pub fn curve(&self, rule: Rule) -> Option<&TraceCurve> {
        self.curves.iter().find(|c| c.rule == rule)
    }
}

/// Deviation curves only, without file output.
pub fn trace_curves(tc: &TraceConfig) -> Result<TraceSummary> {
    tc.validate()?;
    let s = NoiseSchedule::default_linear(tc.t_max)?;
    let pat = |i| rng::normal_vec(&mut rng::stream(tc.seed, rng::tag::NOISE_PATTERN, i), tc.dim);
    let (x0, z) = (pat(0), pat(1));
    let b = tc.bias / (tc.dim as f64).sqrt();
    let grid = full_grid(tc.t_max);
    let mut curves = Vec::new();
    for &rule in &tc.rules {
        let x0c = x0.clone();
        let mut recon = move |_: &[f64], _: usize| x0c.iter().map(|v| v + b).collect::<Vec<f64>>();
        let tr = trace_deviation(&x0, &z, &s, rule, &mut recon, &grid)?;
        curves.push(TraceCurve {
            rule,
            times: tr.times(),
            deviations: tr.deviations.expect("tracing records deviations"),
        });
    }
    let (g_t, _, _) = s.coeffs(tc.t_max)?;
    Ok(TraceSummary {
        curves,
        cold_closed_form: (1.0 - g_t).abs() * tc.bias,
    })
}

/// `trace`: teacher-forced deviation curves per rule, as CSV and SVG.
pub fn run_trace(tc: &TraceConfig, dir: &Path) -> Result<TraceSummary> {
    let summary = trace_curves(tc)?;
    prepare_dir(dir)?;
    let mut m = RunManifest::new("trace", tc, tc.seed, Some(&NoiseSchedule::default_linear(tc.t_max)?))?;
    let mut rows = Vec::new();
    for c in &summary.curves {
        for (&t, &d) in c.times.iter().zip(&c.deviations) {
            rows.push(TraceRow {
                rule: c.rule.name().to_string(),
                t,
                deviation: d,
            });
        }
    }
    put(dir, &mut m, "trace.csv", &csv::trace_csv(&rows))?;
    let xs: Vec<f64> = summary.curves[0].times.iter().map(|&t| t as f64).collect();
    let series: Vec<Series> = summary
        .curves
        .iter()
        .map(|c| Series::new(c.rule.name(), c.deviations.clone()))
        .collect();
    let labels = PlotLabels {
        title: format!("Teacher-forced deviation, bias {}", tc.bias),
        x: "t".into(),
        y: "deviation from D(x0, t)".into(),
    };
    put(dir, &mut m, "trace.svg", &emit_svg(&xs, &series, &labels, false)?)?;
    m.set_extra("cold_closed_form", summary.cold_closed_form);
    m.write(dir)?;
    Ok(summary)
}

/// `plot`: renders chosen numeric columns of a CSV against another column.
/// Rows with an empty cell in any chosen column are skipped.
pub fn plot_csv(text: &str, x: &str, ys: &[String], log_y: bool) -> Result<String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::invalid("empty CSV"))?
        .split(',')
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::invalid(format!("no column named {name:?}")))
    };
    let xi = col(x)?;
    let yi: Vec<usize> = ys.iter().map(|y| col(y)).collect::<Result<_>>()?;
    let mut xv = Vec::new();
    let mut yv: Vec<Vec<f64>> = vec![Vec::new(); yi.len()];
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(Error::invalid(format!("row {} has {} cells", row + 1, cells.len())));
        }
        if std::iter::once(xi)
            .chain(yi.iter().copied())
            .any(|i| cells[i].is_empty())
        {
            continue;
        }
        let num = |i: usize| {
            cells[i]
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("row {}: {:?} is not a number", row + 1, cells[i])))
        };
        xv.push(num(xi)?);
        for (k, &i) in yi.iter().enumerate() {
            yv[k].push(num(i)?);
        }
    }
    let series: Vec<Series> = ys.iter().zip(yv).map(|(n, v)| Series::new(n.clone(), v)).collect();
    let labels = PlotLabels {
        title: String::new(),
        x: x.to_string(),
        y: String::new(),
    };
    emit_svg(&xv, &series, &labels, log_y)
}

/// Named experiment presets, each mapped to exactly one driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentPreset {
    Race,
    AblateK,
    RoleOfTerm,
    Trace,
    Fig7,
}

impl ExperimentPreset {
    pub const ALL: [ExperimentPreset; 5] = [Self::Race, Self::AblateK, Self::RoleOfTerm, Self::Trace, Self::Fig7];

    pub fn name(self) -> &'static str {
        match self {
            Self::Race => "race",
            Self::AblateK => "ablate-k",
            Self::RoleOfTerm => "role-of-term",
            Self::Trace => "trace",
            Self::Fig7 => "fig7",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown preset {s:?}")))
    }

    /// The preset's configuration document.
    pub fn config(self) -> Value {
        match self {
            Self::Race => to_json(&presets::race()),
            Self::AblateK => to_json(&presets::ablate_k()),
            Self::RoleOfTerm => to_json(&presets::role_of_term()),
            Self::Trace => to_json(&presets::trace()),
            Self::Fig7 => to_json(&presets::fig7()),
        }
    }

    /// Runs the preset's driver with `config` (as produced by
    /// [`ExperimentPreset::config`], possibly edited). Returns the driver's
    /// summary as JSON.
    pub fn run(self, config: Value, dir: &Path) -> Result<Value> {
        fn parse<T: serde::de::DeserializeOwned>(v: Value) -> Result<T> {
            serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
        }
        Ok(match self {
            Self::Race => to_json(&run_race(&parse(config)?, dir)?),
            Self::AblateK => to_json(&run_ablate_k(&parse(config)?, dir)?),
            Self::RoleOfTerm => to_json(&run_role_of_term(&parse(config)?, dir)?),
            Self::Trace => to_json(&run_trace(&parse(config)?, dir)?),
            Self::Fig7 => to_json(&run_fig7(&parse(config)?, dir)?),
        })
    }
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serialises")
}

/// Default experiment configurations.
pub mod presets {
    use super::*;

    /// The 8-mode mixture at the given horizon, trained for 4000 steps at
    /// learning rate 1e-3.
    pub fn toy(t_max: usize, comp: bool) -> TrainConfig {
        let mut c = TrainConfig::new(t_max);
        c.outer_steps = 4000;
        c.lr_denoiser = 1e-3;
        c.comp_enabled = comp;
        c
    }

    pub fn race() -> RaceConfig {
        RaceConfig {
            baseline: toy(1000, false),
            compensated: toy(100, true),
            seeds: (0..5).collect(),
            outer_steps: 4000,
            eval_every: 500,
        }
    }

    pub fn ablate_k() -> AblateConfig {
        let mut base = toy(100, true);
        base.eval_every = 0;
        AblateConfig {
            base,
            k_values: crate::harness::config::default_k_values(),
            seeds: vec![0, 1, 2],
        }
    }

    pub fn role_of_term() -> SweepConfig {
        let mut base = toy(100, true);
        base.eval_every = 0;
        SweepConfig {
            base,
            seeds: (0..5).collect(),
        }
    }

    pub fn fig7() -> SweepConfig {
        SweepConfig {
            seeds: vec![0],
            ..role_of_term()
        }
    }

    pub fn trace() -> TraceConfig {
        TraceConfig {
            bias: 0.1,
            rules: crate::harness::config::default_trace_rules(),
            t_max: 100,
            dim: 8,
            seed: 0,
        }
    }
}
