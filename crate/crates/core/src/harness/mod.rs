//! Experiment harness: configs, manifests, drivers and CSV/SVG output used
//! by the `compsamp` binary.

pub mod config;
pub mod csv;
pub mod experiments;
pub mod manifest;
pub mod svg;

pub use config::{load_json, AblateConfig, RaceConfig, SweepConfig, TraceConfig};
pub use experiments::ExperimentPreset;
pub use manifest::RunManifest;

use std::path::PathBuf;

pub const OUT_ENV: &str = "COMPSAMP_OUT";
pub const TOOL_VERSION: &str = concat!("compsamp ", env!("CARGO_PKG_VERSION"));

/// Output root: `COMPSAMP_OUT` when set, else `./runs`.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}
