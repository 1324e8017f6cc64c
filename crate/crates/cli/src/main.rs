use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use compsamp::harness::config::{load_json, load_train_config};
use compsamp::harness::experiments::{self as exp, EvalRequest, ExperimentPreset, SampleRequest};
use compsamp::harness::manifest::make_run_id;
use compsamp::harness::{output_root, AblateConfig, RaceConfig, SweepConfig, TraceConfig};
use compsamp::metrics::{DEFAULT_K, DEFAULT_PROJECTIONS};
use compsamp::samplers::Rule;
use compsamp::schedule::NoiseSchedule;

/// Compensation sampling for diffusion models on toy data.
#[derive(Parser)]
#[command(name = "compsamp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutArg {
    /// Output directory. Defaults to `$COMPSAMP_OUT/<command>/<run id>`
    /// (`./runs` when the variable is unset).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write β, ᾱ, g, f and w for a linear schedule.
    ScheduleDump {
        #[arg(long)]
        t_max: usize,
        #[arg(long, default_value_t = 1e-4)]
        beta_start: f64,
        #[arg(long, default_value_t = 0.02)]
        beta_end: f64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Draw normalised samples from a training config's dataset.
    DataDump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Train a denoiser (and compensation module) from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
    /// Generate samples from trained checkpoints.
    Sample {
        /// The training config the checkpoints were produced with.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        denoiser: PathBuf,
        #[arg(long)]
        comp: Option<PathBuf>,
        /// ddpm, ddim, cold or comp-learned.
        #[arg(long, default_value = "ddim")]
        rule: String,
        #[arg(long, default_value_t = 0.0)]
        eta: f64,
        /// Denoiser calls on an evenly strided grid; full grid when omitted.
        #[arg(long)]
        nfe: Option<usize>,
        /// Skip the learned compensation term while sampling.
        #[arg(long)]
        no_comp_at_inference: bool,
        #[arg(long, default_value_t = 2048)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Score a sample CSV against the config's dataset.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PROJECTIONS)]
        projections: usize,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Convergence race between a baseline and a compensated arm.
    Race {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
    /// Sweep the compensation module's inner iteration count.
    AblateK {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
    /// Compare DDIM, Cold, compensation in training only, and in both.
    RoleOfTerm {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
    /// Compensation target magnitude over training.
    Fig7 {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
    /// Teacher-forced deviation under a constant-bias reconstruction.
    Trace {
        /// Norm of the bias added to the true x0.
        #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
        bias: f64,
        /// Comma-separated rules among ddim, cold, comp-oracle.
        #[arg(long, value_delimiter = ',', default_value = "ddim,cold,comp-oracle")]
        rules: Vec<String>,
        #[arg(long, default_value_t = 100)]
        t_max: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Plot CSV columns as an SVG line chart.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long, value_delimiter = ',', required = true)]
        y: Vec<String>,
        #[arg(long)]
        log_y: bool,
        /// Destination SVG file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a preset's config, or run it with `--run`.
    Preset {
        /// race, ablate-k, role-of-term, trace or fig7.
        name: String,
        #[arg(long)]
        run: bool,
        #[command(flatten)]
        out: OutArg,
    },
}

fn out_dir(out: OutArg, command: &str, config: &Value) -> PathBuf {
    out.out
        .unwrap_or_else(|| output_root().join(command).join(make_run_id(config)))
}

fn echo(v: &impl serde::Serialize) -> Value {
    serde_json::to_value(v).expect("configs serialise")
}

fn report(dir: &Path, summary: Option<Value>) {
    if let Some(s) = summary {
        // A closed pipe (e.g. `| head`) is not worth a panic.
        let _ = writeln!(
            io::stdout(),
            "{}",
            serde_json::to_string_pretty(&s).expect("summary serialises")
        );
    }
    eprintln!("wrote {}", dir.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ScheduleDump {
            t_max,
            beta_start,
            beta_end,
            out,
        } => {
            let s = NoiseSchedule::linear(t_max, beta_start, beta_end)?;
            let cfg = serde_json::json!({ "t_max": t_max, "beta_start": beta_start, "beta_end": beta_end });
            let dir = out_dir(out, "schedule-dump", &cfg);
            exp::run_schedule_dump(&s, &cfg, &dir)?;
            report(&dir, None);
        }
        Command::DataDump { config, n, seed, out } => {
            let cfg = load_train_config(&config)?;
            let dir = out_dir(out, "data-dump", &echo(&cfg.dataset));
            exp::run_data_dump(&cfg.dataset, n, seed, &dir)?;
            report(&dir, None);
        }
        Command::Train { config, out } => {
            let cfg = load_train_config(&config)?;
            let dir = out_dir(out, "train", &echo(&cfg));
            let (tr, _) = exp::run_train(&cfg, &dir)?;
            report(
                &dir,
                tr.evals
                    .last()
                    .map(|(step, r)| serde_json::json!({ "step": step, "final": r })),
            );
        }
        Command::Sample {
            config,
            denoiser,
            comp,
            rule,
            eta,
            nfe,
            no_comp_at_inference,
            n,
            seed,
            out,
        } => {
            let req = SampleRequest {
                config: load_train_config(&config)?,
                denoiser,
                comp,
                rule: Rule::parse(&rule)?,
                eta,
                nfe,
                use_comp_at_inference: !no_comp_at_inference,
                n,
                seed,
            };
            let dir = out_dir(out, "sample", &echo(&req));
            exp::run_sample(&req, &dir)?;
            report(&dir, None);
        }
        Command::Eval {
            config,
            samples,
            projections,
            k,
            seed,
            out,
        } => {
            let req = EvalRequest {
                dataset: load_train_config(&config)?.dataset,
                samples,
                projections,
                k,
                seed,
            };
            let dir = out_dir(out, "eval", &echo(&req));
            let (r, _) = exp::run_eval(&req, &dir)?;
            report(&dir, Some(echo(&r)));
        }
        Command::Race { config, out } => {
            let rc: RaceConfig = load_json(&config)?;
            let dir = out_dir(out, "race", &echo(&rc));
            let s = exp::run_race(&rc, &dir)?;
            report(&dir, Some(echo(&s)));
        }
        Command::AblateK { config, out } => {
            let ac: AblateConfig = load_json(&config)?;
            let dir = out_dir(out, "ablate-k", &echo(&ac));
            let s = exp::run_ablate_k(&ac, &dir)?;
            report(&dir, Some(echo(&s)));
        }
        Command::RoleOfTerm { config, out } => {
            let rc: SweepConfig = load_json(&config)?;
            let dir = out_dir(out, "role-of-term", &echo(&rc));
            let s = exp::run_role_of_term(&rc, &dir)?;
            report(&dir, Some(echo(&s)));
        }
        Command::Fig7 { config, out } => {
            let rc: SweepConfig = load_json(&config)?;
            let dir = out_dir(out, "fig7", &echo(&rc));
            let s = exp::run_fig7(&rc, &dir)?;
            report(&dir, Some(echo(&s)));
        }
        Command::Trace {
            bias,
            rules,
            t_max,
            dim,
            seed,
            out,
        } => {
            let tc = TraceConfig {
                bias,
                rules: rules.iter().map(|r| Rule::parse(r)).collect::<compsamp::Result<_>>()?,
                t_max,
                dim,
                seed,
            };
            let dir = out_dir(out, "trace", &echo(&tc));
            let s = exp::run_trace(&tc, &dir)?;
            let terminal: Vec<Value> = s
                .curves
                .iter()
                .map(|c| serde_json::json!({ "rule": c.rule, "terminal_deviation": c.deviations.last() }))
                .collect();
            report(
                &dir,
                Some(serde_json::json!({ "curves": terminal, "cold_closed_form": s.cold_closed_form })),
            );
        }
        Command::Plot { csv, x, y, log_y, out } => {
            let text = fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?;
            let svg = exp::plot_csv(&text, &x, &y, log_y)?;
            compsamp::harness::csv::write_text(&out, &svg)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Preset { name, run, out } => {
            let preset = ExperimentPreset::parse(&name)?;
            let cfg = preset.config();
            if run {
                let dir = out_dir(out, preset.name(), &cfg);
                let s = preset.run(cfg, &dir)?;
                report(&dir, Some(s));
            } else {
                println!("{}", serde_json::to_string_pretty(&cfg)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e
                .downcast_ref::<compsamp::Error>()
                .is_some_and(compsamp::Error::is_usage);
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
