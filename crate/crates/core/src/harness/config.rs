//! Strict JSON configuration documents.
//!
//! Unknown keys are rejected everywhere; serde's messages name the offending
//! field, which is surfaced verbatim.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samplers::Rule;
use crate::training::TrainConfig;

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_json(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_train_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let cfg: TrainConfig = load_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Two training arms raced under one step and evaluation budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaceConfig {
    pub baseline: TrainConfig,
    pub compensated: TrainConfig,
    pub seeds: Vec<u64>,
    /// Shared outer-step budget; overrides both arms.
    pub outer_steps: usize,
    /// Shared evaluation period; overrides both arms.
    pub eval_every: usize,
}

impl RaceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_every == 0 || self.outer_steps == 0 {
            return Err(Error::Config(
                "`eval_every` and `outer_steps` must both be positive".into(),
            ));
        }
        if self.outer_steps < self.eval_every {
            return Err(Error::Config("`outer_steps` must allow at least one evaluation".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must not be empty".into()));
        }
        if self.baseline.batch_size != self.compensated.batch_size {
            return Err(Error::Config(format!(
                "arms must use matched `batch_size` ({} vs {})",
                self.baseline.batch_size, self.compensated.batch_size
            )));
        }
        self.arm(&self.baseline, 0).validate()?;
        self.arm(&self.compensated, 0).validate()
    }

    /// The arm's config with the shared budget and the given seed applied.
    pub fn arm(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        let mut c = base.clone();
        c.outer_steps = self.outer_steps;
        c.eval_every = self.eval_every;
        c.seed = seed;
        c
    }
}

/// One training run per inner-iteration count `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    pub base: TrainConfig,
    #[serde(default = "default_k_values")]
    pub k_values: Vec<usize>,
    pub seeds: Vec<u64>,
}

pub fn default_k_values() -> Vec<usize> {
    vec![1, 2, 5, 10, 20, 40, 80]
}

impl AblateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() {
            return Err(Error::Config("`k_values` must not be empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must not be empty".into()));
        }
        if !self.base.comp_enabled {
            return Err(Error::Config("`base.comp_enabled` must be true for a K sweep".into()));
        }
        self.base.validate()
    }
}

/// One base configuration repeated over seeds; used by the role-of-term
/// ablation and the magnitude-trend run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: TrainConfig,
    pub seeds: Vec<u64>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must not be empty".into()));
        }
        self.base.validate()
    }
}

/// Teacher-forced deviation trace under a constant-bias reconstruction
/// `x̂0 = x0 + b` with `‖b‖ = bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    pub bias: f64,
    #[serde(default = "default_trace_rules")]
    pub rules: Vec<Rule>,
    pub t_max: usize,
    #[serde(default = "default_trace_dim")]
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
}

pub fn default_trace_rules() -> Vec<Rule> {
    vec![Rule::Ddim, Rule::Cold, Rule::CompOracle]
}

fn default_trace_dim() -> usize {
    8
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bias >= 0.0 && self.bias.is_finite()) {
            return Err(Error::invalid(format!(
                "bias magnitude must be finite and non-negative, got {}",
                self.bias
            )));
        }
        if self.dim == 0 || self.t_max == 0 {
            return Err(Error::invalid("`dim` and `t_max` must be positive"));
        }
        if self.rules.is_empty() {
            return Err(Error::invalid("no rules to trace"));
        }
        if let Some(r) = self
            .rules
            .iter()
            .find(|r| !matches!(r, Rule::Ddim | Rule::Cold | Rule::CompOracle))
        {
            return Err(Error::invalid(format!("rule {} cannot be teacher-forced", r.name())));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_and_unknown_fields_are_named() {
        let e = parse_json::<TrainConfig>(r#"{"batch_size": 4}"#).unwrap_err();
        assert!(e.to_string().contains("t_max"), "{e}");
        let e = parse_json::<TrainConfig>(r#"{"t_max": 4, "colour": "red"}"#).unwrap_err();
        assert!(e.to_string().contains("colour"), "{e}");
        assert!(e.is_usage());
    }

    #[test]
    fn race_budget_checks() {
        let arm = TrainConfig::new(10);
        let mut rc = RaceConfig {
            baseline: arm.clone(),
            compensated: arm.clone(),
            seeds: vec![0],
            outer_steps: 10,
            eval_every: 0,
        };
        assert!(rc.validate().is_err());
        rc.eval_every = 5;
        assert!(rc.validate().is_ok());
        rc.compensated.batch_size = 3;
        assert!(rc.validate().is_err());
    }

    #[test]
    fn trace_config_checks() {
        let tc: TraceConfig = parse_json(r#"{"bias": 0.1, "t_max": 50}"#).unwrap();
        assert_eq!(tc.rules, default_trace_rules());
        tc.validate().unwrap();
        for bad in [
            r#"{"bias": -1, "t_max": 50}"#,
            r#"{"bias": 0.1, "t_max": 50, "rules": ["ddpm"]}"#,
        ] {
            let tc: TraceConfig = parse_json(bad).unwrap();
            assert!(tc.validate().unwrap_err().is_usage());
        }
    }
}
