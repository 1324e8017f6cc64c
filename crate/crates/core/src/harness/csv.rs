//! CSV writers with fixed 17-significant-digit float formatting, so that
//! replays diff clean.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::training::{CompMagnitudeLog, MagnitudeRow, StepRecord};
use crate::Matrix;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Joins a header and rows into CSV text. Cells are written verbatim; none of
/// the emitted values need quoting.
pub fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn schedule_csv(s: &NoiseSchedule) -> String {
    let rows = (0..=s.t_max()).map(|t| {
        let (beta, g, f, w) = if t == 0 {
            (None, 1.0, 0.0, None)
        } else {
            let (g, f, w) = s.coeffs(t).expect("t within range");
            (Some(s.beta(t)), g, f, Some(w))
        };
        vec![
            t.to_string(),
            fmt_opt(beta),
            fmt_f64(s.alpha_bar(t)),
            fmt_f64(g),
            fmt_f64(f),
            fmt_opt(w),
        ]
    });
    table(&["t", "beta", "alpha_bar", "g", "f", "w"], rows)
}

pub fn samples_csv(m: &Matrix) -> String {
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("x{j}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    table(
        &header,
        m.rows().into_iter().map(|r| r.iter().copied().map(fmt_f64).collect()),
    )
}

/// Parses a sample CSV written by [`samples_csv`] (or any numeric CSV with a
/// header row).
pub fn parse_samples_csv(text: &str) -> Result<Matrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::invalid("empty sample CSV"))?;
    let d = header.split(',').count();
    let mut flat = Vec::new();
    let mut n = 0;
    for (i, line) in lines.enumerate() {
        let before = flat.len();
        for cell in line.split(',') {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("row {}: cannot parse {cell:?}", i + 1)))?;
            flat.push(v);
        }
        if flat.len() - before != d {
            return Err(Error::invalid(format!(
                "row {}: expected {d} columns, found {}",
                i + 1,
                flat.len() - before
            )));
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("sample CSV has no rows"));
    }
    Ok(Matrix::from_shape_vec((n, d), flat).expect("sized above"))
}

pub fn loss_csv(history: &[StepRecord]) -> String {
    let rows = history.iter().map(|r| {
        vec![
            r.step.to_string(),
            fmt_f64(r.denoiser_loss),
            fmt_opt(r.comp_loss),
            fmt_opt(r.swd_eval),
            fmt_f64(r.wallclock_s),
        ]
    });
    table(&["step", "denoiser_loss", "comp_loss", "swd_eval", "wallclock_s"], rows)
}

/// Serialises a compensation-magnitude log; fails on an empty log.
pub fn comp_magnitude_trace(log: &CompMagnitudeLog) -> Result<String> {
    if log.is_empty() {
        return Err(Error::invalid("compensation magnitude log is empty"));
    }
    let rows = log
        .rows()
        .into_iter()
        .map(|r| vec![r.bucket.to_string(), r.decile.to_string(), fmt_f64(r.mean_norm)]);
    Ok(table(&["bucket", "decile", "mean_norm"], rows))
}

pub fn parse_magnitude_csv(text: &str) -> Result<Vec<MagnitudeRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("bucket,decile,mean_norm") => {}
        other => return Err(Error::invalid(format!("unexpected magnitude header {other:?}"))),
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            let bad = || Error::invalid(format!("malformed magnitude row {l:?}"));
            if cells.len() != 3 {
                return Err(bad());
            }
            Ok(MagnitudeRow {
                bucket: cells[0].parse().map_err(|_| bad())?,
                decile: cells[1].parse().map_err(|_| bad())?,
                mean_norm: cells[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub rule: String,
    pub t: usize,
    pub deviation: f64,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    table(
        &["rule", "t", "deviation"],
        rows.iter()
            .map(|r| vec![r.rule.clone(), r.t.to_string(), fmt_f64(r.deviation)]),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaceRow {
    pub arm: String,
    pub seed: u64,
    pub step: usize,
    pub wallclock_s: f64,
    pub swd: f64,
}

pub fn race_csv(rows: &[RaceRow]) -> String {
    table(
        &["arm", "seed", "step", "wallclock_s", "swd"],
        rows.iter().map(|r| {
            vec![
                r.arm.clone(),
                r.seed.to_string(),
                r.step.to_string(),
                fmt_f64(r.wallclock_s),
                fmt_f64(r.swd),
            ]
        }),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblateRow {
    pub k: usize,
    pub swd: f64,
    pub precision: f64,
    pub recall: f64,
}

pub fn ablate_csv(rows: &[AblateRow]) -> String {
    table(
        &["K", "swd", "precision", "recall"],
        rows.iter()
            .map(|r| vec![r.k.to_string(), fmt_f64(r.swd), fmt_f64(r.precision), fmt_f64(r.recall)]),
    )
}

/// Free-form key/value lines, used for run summaries.
pub fn kv_lines(pairs: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}
