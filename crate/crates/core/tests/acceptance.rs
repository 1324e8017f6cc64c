//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs every criterion and exits 0 so that the remaining test targets still
//! run; set `COMPSAMP_ACCEPT_STRICT=1` to exit non-zero on any failure.
//! `COMPSAMP_ACCEPT_ONLY=1,5,11` restricts the run to the listed criteria.

mod common;

use std::fs;
use std::time::Instant;

use compsamp::denoisers::{CompensationHandle, DenoiserHandle};
use compsamp::harness::experiments::{self as exp, presets, SampleRequest};
use compsamp::harness::{AblateConfig, TraceConfig};
use compsamp::nn::{mlp_init, Activation, Loss, TimeEmbedding};
use compsamp::rng;
use compsamp::samplers::{comp_step_oracle, full_grid, generate, trace_deviation, Rule, SamplerParams};
use compsamp::schedule::NoiseSchedule;
use compsamp::training::TrainConfig;
use rand::Rng as _;

use common::{fraction_below, gradient_errors, max_of};

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = (usize, &'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn perfect_inverse() -> Outcome {
    let start = Instant::now();
    let s = NoiseSchedule::default_linear(100).unwrap();
    let mut r = rng::stream(1, 0xacc, 1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let t = r.gen_range(1..=100);
        let x0 = rng::normal_vec(&mut r, 8);
        let z = rng::normal_vec(&mut r, 8);
        let x0_hat: Vec<f64> = rng::normal_vec(&mut r, 8).iter().map(|v| 3.0 * v).collect();
        let x_t = s.degrade(&x0, &z, t).unwrap();
        let next = comp_step_oracle(&x_t, (t, t - 1), &x0_hat, &x0, &z, &s).unwrap();
        let want = s.degrade(&x0, &z, t - 1).unwrap();
        worst = worst.max(max_abs_diff(&next, &want));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-10 && secs < 5.0,
        format!("max |error| {worst:.3e} over 1000 tuples in {secs:.2}s"),
    )
}

fn telescoping() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (i, t_max) in [100usize, 1000].iter().cycle().take(100).enumerate() {
        let s = NoiseSchedule::default_linear(*t_max).unwrap();
        let mut r = rng::stream(2, 0xacc, i as u64);
        let x0 = rng::normal_vec(&mut r, 8);
        let z = rng::normal_vec(&mut r, 8);
        let mut adversary = rng::stream(2, 0xadd, i as u64);
        let mut recon =
            |_: &[f64], _: usize| -> Vec<f64> { rng::normal_vec(&mut adversary, 8).iter().map(|v| 5.0 * v).collect() };
        let tr = trace_deviation(&x0, &z, &s, Rule::CompOracle, &mut recon, &full_grid(*t_max)).unwrap();
        let (t, last) = tr.iterates.last().unwrap();
        assert_eq!(*t, 0);
        worst = worst.max(max_abs_diff(last, &x0));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-8 && secs < 5.0,
        format!("max |x_0 - x0| {worst:.3e} over 100 sequences in {secs:.2}s"),
    )
}

fn ddim_collapse() -> Outcome {
    let s = NoiseSchedule::default_linear(100).unwrap();
    let emb = TimeEmbedding::default();
    let h = DenoiserHandle::trained(mlp_init(&[2 + emb.dim(), 32, 32, 2], Activation::Silu, 3).unwrap(), emb).unwrap();
    let mut cp = mlp_init(&[2 + emb.dim(), 16, 2], Activation::Silu, 4).unwrap();
    cp.zero_output_layer();
    let c = CompensationHandle::new(cp, emb, true).unwrap();
    let ddim = SamplerParams::new(Rule::Ddim, full_grid(100));
    let comp = SamplerParams::new(Rule::CompLearned, full_grid(100));
    let a = generate(&h, None, &ddim, &s, 100, 2, 9, true).unwrap();
    let b = generate(&h, Some(&c), &comp, &s, 100, 2, 9, true).unwrap();
    let bits = |g: &compsamp::samplers::Generated| -> Vec<u64> {
        g.trajectories
            .as_ref()
            .unwrap()
            .iter()
            .flat_map(|tr| tr.iterates.iter().flat_map(|(_, x)| x.iter().map(|v| v.to_bits())))
            .collect()
    };
    let (ba, bb) = (bits(&a), bits(&b));
    let same = ba == bb;
    outcome(
        same,
        format!("{} iterate coordinates over 100 chains, identical: {same}", ba.len()),
    )
}

fn gradients() -> Outcome {
    let mut r = rng::stream(4, 0xacc, 0);
    let mut errs = Vec::new();
    let mut nets = 0;
    for loss in [Loss::MeanSquared, Loss::MeanAbsolute] {
        for _ in 0..20 {
            let depth = r.gen_range(0..=2);
            let mut dims = vec![r.gen_range(1..=4)];
            dims.extend((0..depth).map(|_| r.gen_range(1..=16)));
            dims.push(r.gen_range(1..=4));
            errs.extend(gradient_errors(
                &dims,
                Activation::Silu,
                loss,
                r.gen_range(1..=8),
                r.gen(),
                1e-5,
            ));
            nets += 1;
        }
        errs.extend(gradient_errors(&[4, 16, 16, 4], Activation::Silu, loss, 8, 77, 1e-5));
        nets += 1;
    }
    let frac = fraction_below(&errs, 1e-4);
    let worst = max_of(&errs);
    outcome(
        frac >= 0.99 && worst <= 1e-3,
        format!(
            "{nets} nets, {} coordinates: {:.2}% below 1e-4, max relative error {worst:.2e}",
            errs.len(),
            100.0 * frac
        ),
    )
}

fn schedule_invariants() -> Outcome {
    let mut worst_unit: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    let mut decreasing = true;
    for t_max in [2, 100, 1000] {
        let s = NoiseSchedule::default_linear(t_max).unwrap();
        let mut sum_w = 0.0;
        for t in 1..=t_max {
            let (g, f, w) = s.coeffs(t).unwrap();
            worst_unit = worst_unit.max((g * g + f * f - 1.0).abs());
            sum_w += w;
        }
        worst_sum = worst_sum.max((sum_w - (s.coeffs(t_max).unwrap().0 - 1.0)).abs());
        decreasing &= s.alpha_bars().windows(2).all(|p| p[1] < p[0]);
    }
    outcome(
        worst_unit <= 1e-12 && worst_sum <= 1e-12 && decreasing,
        format!(
            "max |g²+f²-1| {worst_unit:.1e}, max |Σw - (g(T)-1)| {worst_sum:.1e}, ᾱ strictly decreasing: {decreasing}"
        ),
    )
}

fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn oracle_slope() -> Outcome {
    let t_max = 100;
    let s = NoiseSchedule::default_linear(t_max).unwrap();
    let (mu, var) = (0.7, 0.5);
    let h = DenoiserHandle::gaussian_oracle(vec![mu], var).unwrap();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for t in [t_max / 4, t_max / 2, t_max] {
        let (g, f, _) = s.coeffs(t).unwrap();
        let closed = g * var / (g * g * var + f * f);
        let mut r = rng::stream(6, 0xacc, t as u64);
        let n = 100_000;
        let mut xt = Vec::with_capacity(n);
        let mut x0 = Vec::with_capacity(n);
        for _ in 0..n {
            let a = mu + var.sqrt() * rng::normal(&mut r);
            x0.push(a);
            xt.push(g * a + f * rng::normal(&mut r));
        }
        let m = ndarray::Array2::from_shape_vec((n, 1), xt.clone()).unwrap();
        let x0_hat = h.predict_x0_batch(m.view(), t, &s).unwrap().into_raw_vec_and_offset().0;
        // The oracle's own slope, and the Monte Carlo regression of the true
        // x0 on x_t, both against the conjugate closed form.
        let own = ols_slope(&xt, &x0_hat) / closed - 1.0;
        let mc = ols_slope(&xt, &x0) / closed - 1.0;
        worst = worst.max(own.abs()).max(mc.abs());
        parts.push(format!("t={t}: oracle {:+.2e}, MC {:+.2}%", own, 100.0 * mc));
    }
    outcome(worst < 0.02, parts.join("; "))
}

fn median_secs(start: Instant) -> String {
    format!("{:.0}s", start.elapsed().as_secs_f64())
}

struct RaceResult {
    ratio: f64,
    spearman: Option<f64>,
    detail: String,
    spearman_detail: String,
    secs: f64,
}

fn race() -> RaceResult {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let summary = exp::run_race(&presets::race(), dir.path()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let per_seed: Vec<String> = summary
        .seeds
        .iter()
        .map(|s| {
            format!(
                "seed {}: target {:.4}, compensated at {}",
                s.seed,
                s.baseline_final_swd,
                s.compensated_first_step.map_or("never".into(), |v| v.to_string())
            )
        })
        .collect();
    let rhos: Vec<String> = summary
        .seeds
        .iter()
        .map(|s| s.magnitude_spearman.map_or("n/a".into(), |v| format!("{v:.3}")))
        .collect();
    RaceResult {
        ratio: summary.median_step_ratio,
        spearman: summary.median_magnitude_spearman,
        detail: format!(
            "median step ratio {:.3} of {} baseline steps ({}) in {secs:.0}s",
            summary.median_step_ratio,
            summary.outer_steps,
            per_seed.join("; ")
        ),
        spearman_detail: format!("per-seed ρ [{}]", rhos.join(", ")),
        secs,
    }
}

fn role_of_term() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let s = exp::run_role_of_term(&presets::role_of_term(), dir.path()).unwrap();
    let m = |arm: &str| s.median_of(arm).unwrap();
    let (cs, train_only, ddim, cold) = (m("cs"), m("cs-train-only"), m("ddim"), m("cold"));
    let pass = cs <= train_only && train_only < ddim;
    outcome(
        pass,
        format!(
            "median SWD: cs {cs:.4}, cs-train-only {train_only:.4}, ddim {ddim:.4}, cold {cold:.4} ({})",
            median_secs(start)
        ),
    )
}

fn ablate_k() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let ac = AblateConfig {
        k_values: vec![1, 20],
        ..presets::ablate_k()
    };
    let s = exp::run_ablate_k(&ac, dir.path()).unwrap();
    let (k1, k20) = (&s.rows[0], &s.rows[1]);
    let swd_gap = (k1.swd - k20.swd).abs() / k1.swd.max(k20.swd);
    let pass = k20.recall <= k1.recall && swd_gap <= 0.10;
    outcome(
        pass,
        format!(
            "median recall K=1 {:.4}, K=20 {:.4}; SWD {:.4} vs {:.4} (gap {:.1}%); precision {:.4} vs {:.4} ({})",
            k1.recall,
            k20.recall,
            k1.swd,
            k20.swd,
            100.0 * swd_gap,
            k1.precision,
            k20.precision,
            median_secs(start)
        ),
    )
}

fn error_trace() -> Outcome {
    let tc = TraceConfig {
        bias: 0.1,
        ..presets::trace()
    };
    let s = exp::trace_curves(&tc).unwrap();
    let cold = *s.curve(Rule::Cold).unwrap().deviations.last().unwrap();
    let comp = *s.curve(Rule::CompOracle).unwrap().deviations.last().unwrap();
    let gap = (cold - s.cold_closed_form).abs();
    outcome(
        gap < 1e-9 && comp < 1e-10,
        format!(
            "cold terminal {cold:.12} vs closed form {:.12} (gap {gap:.1e}); comp-oracle terminal {comp:.1e}",
            s.cold_closed_form
        ),
    )
}

fn determinism() -> Outcome {
    let mut cfg = TrainConfig::new(50);
    cfg.batch_size = 64;
    cfg.outer_steps = 60;
    cfg.eval_every = 20;
    cfg.eval_samples = 128;
    cfg.denoiser_hidden = vec![32, 32];
    cfg.comp_hidden = vec![16];
    cfg.magnitude_buckets = 5;
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let d = dir.path().join(run);
        exp::run_train(&cfg, &d).unwrap();
        let req = SampleRequest {
            config: cfg.clone(),
            denoiser: d.join("denoiser.ckpt"),
            comp: Some(d.join("comp.ckpt")),
            rule: Rule::CompLearned,
            eta: 0.0,
            nfe: None,
            use_comp_at_inference: true,
            n: 256,
            seed: 5,
        };
        exp::run_sample(&req, &d.join("sample")).unwrap();
        let stoch = SampleRequest {
            rule: Rule::Ddpm,
            ..req
        };
        exp::run_sample(&stoch, &d.join("sample-ddpm")).unwrap();
        files.push(d);
    }
    let names = [
        "loss.csv",
        "magnitudes.csv",
        "sample/samples.csv",
        "sample-ddpm/samples.csv",
    ];
    let same: Vec<bool> = names
        .iter()
        .map(|n| fs::read(files[0].join(n)).unwrap() == fs::read(files[1].join(n)).unwrap())
        .collect();
    let all = same.iter().all(|&b| b);
    outcome(
        all,
        format!("{} CSV pairs compared, identical: {:?}", names.len(), same),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("COMPSAMP_ACCEPT_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|o| o.contains(&i));

    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |i: usize, name: &'static str, o: Outcome| {
        println!("{} {i:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((i, name, o));
    };

    let quick: [Check; 6] = [
        (1, "perfect-inverse identity", perfect_inverse),
        (2, "telescoping recovery", telescoping),
        (3, "DDIM collapse", ddim_collapse),
        (4, "gradient correctness", gradients),
        (5, "schedule invariants", schedule_invariants),
        (6, "oracle denoiser slope", oracle_slope),
    ];
    for (i, name, f) in quick {
        if wanted(i) {
            record(i, name, f());
        }
    }
    if wanted(7) || wanted(9) {
        let r = race();
        if wanted(7) {
            record(
                7,
                "convergence race",
                outcome(r.ratio <= 0.7 && r.secs < 1800.0, r.detail.clone()),
            );
        }
        if wanted(9) {
            let rho = r.spearman.unwrap_or(f64::NAN);
            record(
                9,
                "compensation magnitude trend",
                outcome(
                    rho <= -0.5,
                    format!("median Spearman ρ {rho:.3}; {}", r.spearman_detail),
                ),
            );
        }
    }
    if wanted(8) {
        record(8, "role of the compensation term", role_of_term());
    }
    if wanted(10) {
        record(10, "inner-iteration trend", ablate_k());
    }
    if wanted(11) {
        record(11, "error-accumulation trace", error_trace());
    }
    if wanted(12) {
        record(12, "determinism", determinism());
    }

    results.sort_by_key(|r| r.0);
    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| r.0.to_string()).collect();
    println!(
        "acceptance: {}/{} passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed: {}", failed.join(", "))
        }
    );
    if !failed.is_empty() && std::env::var_os("COMPSAMP_ACCEPT_STRICT").is_some() {
        std::process::exit(1);
    }
}
