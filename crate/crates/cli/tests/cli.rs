use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"{
  "t_max": 100,
  "batch_size": 32,
  "outer_steps": 20,
  "eval_every": 10,
  "eval_samples": 64,
  "eval_projections": 16,
  "denoiser_hidden": [16, 16],
  "comp_hidden": [8],
  "magnitude_buckets": 4
}"#;

fn compsamp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_compsamp"))
        .args(args)
        .current_dir(dir)
        .env("COMPSAMP_OUT", dir.join("runs"))
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn train_small(dir: &Path, out: &str) {
    fs::write(dir.join("cfg.json"), SMALL).unwrap();
    let o = compsamp(dir, &["train", "--config", "cfg.json", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn train_writes_manifest_and_logs() {
    let tmp = tempfile::tempdir().unwrap();
    train_small(tmp.path(), "tr");
    let out = tmp.path().join("tr");
    let m = manifest(&out);
    for a in m["artifacts"].as_array().unwrap() {
        assert!(out.join(a.as_str().unwrap()).exists(), "{a}");
    }
    let loss = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(
        loss.lines().next().unwrap(),
        "step,denoiser_loss,comp_loss,swd_eval,wallclock_s"
    );
    assert_eq!(loss.lines().count(), 21);
}

#[test]
fn default_output_root_comes_from_env() {
    let tmp = tempfile::tempdir().unwrap();
    let o = compsamp(tmp.path(), &["schedule-dump", "--t-max", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let runs: Vec<_> = fs::read_dir(tmp.path().join("runs/schedule-dump")).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let dir = runs[0].as_ref().unwrap().path();
    assert_eq!(fs::read_to_string(dir.join("schedule.csv")).unwrap().lines().count(), 6);
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("missing.json"), r#"{"batch_size": 8}"#).unwrap();
    let o = compsamp(tmp.path(), &["train", "--config", "missing.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("t_max"), "{}", stderr(&o));

    fs::write(tmp.path().join("unknown.json"), r#"{"t_max": 10, "learning_rate": 1}"#).unwrap();
    let o = compsamp(tmp.path(), &["train", "--config", "unknown.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));

    let o = compsamp(tmp.path(), &["train", "--config", "absent.json"]);
    assert_eq!(o.status.code(), Some(2));

    let o = compsamp(tmp.path(), &["trace", "--bias", "-0.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_race_budget_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let race =
        format!(r#"{{"baseline": {SMALL}, "compensated": {SMALL}, "seeds": [0], "outer_steps": 20, "eval_every": 0}}"#);
    fs::write(tmp.path().join("race.json"), race).unwrap();
    let o = compsamp(tmp.path(), &["race", "--config", "race.json"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn sampling_is_reproducible_and_flags_are_equivalent() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    train_small(d, "tr");
    let base = [
        "sample",
        "--config",
        "cfg.json",
        "--denoiser",
        "tr/denoiser.ckpt",
        "--n",
        "50",
        "--seed",
        "7",
    ];
    let run = |extra: &[&str], out: &str| {
        let mut args = base.to_vec();
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", out]);
        let o = compsamp(d, &args);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(d.join(out).join("samples.csv")).unwrap()
    };
    let a = run(&["--rule", "ddim", "--eta", "0"], "a");
    let b = run(&["--rule", "ddim", "--eta", "0"], "b");
    assert_eq!(a, b);
    let c = run(
        &[
            "--rule",
            "comp-learned",
            "--comp",
            "tr/comp.ckpt",
            "--no-comp-at-inference",
        ],
        "c",
    );
    assert_eq!(a, c);
    let e = run(&["--rule", "comp-learned", "--comp", "tr/comp.ckpt"], "e");
    assert_ne!(e, a);

    run(&["--rule", "ddim", "--nfe", "10"], "g");
    let m = manifest(&d.join("g"));
    let grid: Vec<u64> = m["extra"]["time_grid"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(grid, vec![100, 90, 80, 70, 60, 50, 40, 30, 20, 10]);
    assert_eq!(m["extra"]["nfe"], 10);
}

#[test]
fn training_replays_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    train_small(d, "r1");
    train_small(d, "r2");
    for f in [
        "loss.csv",
        "magnitudes.csv",
        "denoiser.ckpt",
        "comp.ckpt",
        "metrics.jsonl",
    ] {
        assert_eq!(
            fs::read(d.join("r1").join(f)).unwrap(),
            fs::read(d.join("r2").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn checkpoint_shape_mismatch_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    train_small(d, "tr");
    let o = compsamp(
        d,
        &[
            "sample",
            "--config",
            "cfg.json",
            "--denoiser",
            "tr/comp.ckpt",
            "--n",
            "4",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("expected"), "{}", stderr(&o));
}

#[test]
fn trace_and_plot_emit_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = compsamp(d, &["trace", "--bias", "0.1", "--t-max", "50", "--out", "trace"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    let cold = summary["curves"][1]["terminal_deviation"].as_f64().unwrap();
    assert!((cold - summary["cold_closed_form"].as_f64().unwrap()).abs() < 1e-9);
    assert!(d.join("trace/trace.svg").exists());

    let o = compsamp(
        d,
        &[
            "plot",
            "--csv",
            "trace/trace.csv",
            "--x",
            "t",
            "--y",
            "deviation",
            "--out",
            "p.svg",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(d.join("p.svg")).unwrap().contains("<polyline"));

    fs::write(d.join("nan.csv"), "x,y\n1,2\n2,NaN\n").unwrap();
    let o = compsamp(
        d,
        &["plot", "--csv", "nan.csv", "--x", "x", "--y", "y", "--out", "q.svg"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("index 1"), "{}", stderr(&o));
}

#[test]
fn presets_print_valid_configs() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["race", "ablate-k", "role-of-term", "trace", "fig7"] {
        let o = compsamp(tmp.path(), &["preset", name]);
        assert!(o.status.success(), "{}", stderr(&o));
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert!(v.is_object());
    }
    let o = compsamp(tmp.path(), &["preset", "fig9"]);
    assert_eq!(o.status.code(), Some(2));
}
