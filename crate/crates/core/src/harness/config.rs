//! Experiment configuration.
//!
//! Configs are TOML files. Every field has a default, so an empty file is a
//! valid config. Individual keys can be overridden with dotted paths, e.g.
//! `guidance.sigma_d=0.6` or `episodes_per_cell=20`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::env::{EnvConfig, OraclePolicyParams};
use crate::guidance::{GuidanceConfig, Method, StartPolicy};

/// Guidance hyperparameters shared by every method in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceParams {
    pub sigma_d: f64,
    pub rho: f64,
    /// Clipping threshold; defaults to the number of denoising steps.
    pub beta: Option<f64>,
    pub steps: usize,
    pub epsilon: f64,
    pub start: StartPolicy,
}

impl Default for GuidanceParams {
    fn default() -> Self {
        GuidanceParams {
            sigma_d: 0.4,
            rho: 0.5,
            beta: None,
            steps: 10,
            epsilon: 1e-8,
            start: StartPolicy::Skip,
        }
    }
}

impl GuidanceParams {
    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or(self.steps as f64)
    }

    pub fn for_method(&self, method: Method) -> GuidanceConfig {
        GuidanceConfig {
            method,
            sigma_d: self.sigma_d,
            rho: self.rho,
            beta: self.beta(),
            steps: self.steps,
            epsilon: self.epsilon,
            start: self.start,
        }
    }
}

/// One environment variant. Variants play the role of task suites in the
/// episode-weighted aggregation; `weight` is the suite's task count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub id: String,
    #[serde(default = "default_weight")]
    pub weight: u64,
    /// Number of policy modes: 1 for the plain reach, 2 for the detour.
    #[serde(default = "default_modes")]
    pub modes: usize,
    #[serde(default)]
    pub env: EnvConfig,
}

fn default_weight() -> u64 {
    10
}

fn default_modes() -> usize {
    1
}

impl SuiteConfig {
    pub fn reach() -> Self {
        SuiteConfig {
            id: "reach".into(),
            weight: 10,
            modes: 1,
            env: EnvConfig::reach(),
        }
    }

    pub fn detour() -> Self {
        SuiteConfig {
            id: "detour".into(),
            weight: 10,
            modes: 2,
            env: EnvConfig::detour(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub delays: Vec<usize>,
    pub episodes_per_cell: usize,
    pub seed_base: u64,
    pub mask_decay: f64,
    pub output_dir: PathBuf,
    /// Fraction of episodes allowed to abort (schedule overrun or a
    /// numerical failure) before the run counts as failed.
    pub max_runtime_failure_fraction: f64,
    pub guidance: GuidanceParams,
    /// Shared policy settings; `modes` is taken from each suite.
    pub policy: OraclePolicyParams,
    pub suites: Vec<SuiteConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            methods: Method::ALL.to_vec(),
            delays: (0..=5).collect(),
            episodes_per_cell: 50,
            seed_base: 0,
            mask_decay: 0.5,
            output_dir: PathBuf::from("results"),
            max_runtime_failure_fraction: 0.0,
            guidance: GuidanceParams::default(),
            policy: OraclePolicyParams::default(),
            suites: vec![SuiteConfig::reach(), SuiteConfig::detour()],
        }
    }
}

impl ExperimentConfig {
    /// Parse a TOML document and apply `key=value` overrides on top.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if self.delays.is_empty() {
            return bad("delays must not be empty".into());
        }
        if self.episodes_per_cell == 0 {
            return bad("episodes_per_cell must be >= 1".into());
        }
        if self.suites.is_empty() {
            return bad("at least one suite is required".into());
        }
        let mut ids: Vec<&str> = self.suites.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("suite ids must be unique".into());
        }
        if !(0.0..=1.0).contains(&self.max_runtime_failure_fraction) {
            return bad("max_runtime_failure_fraction must lie in [0, 1]".into());
        }
        for m in &self.methods {
            self.guidance
                .for_method(*m)
                .validate()
                .map_err(|e| HarnessError::Config(format!("guidance: {e}")))?;
        }
        if !(self.mask_decay > 0.0 && self.mask_decay <= 1.0) {
            return bad(format!("mask_decay must lie in (0, 1], got {}", self.mask_decay));
        }
        for s in &self.suites {
            if s.weight == 0 {
                return bad(format!("suite {}: weight must be >= 1", s.id));
            }
            s.env
                .validate()
                .map_err(|e| HarnessError::Config(format!("suite {}: {e}", s.id)))?;
            self.policy_for(s)
                .validate()
                .map_err(|e| HarnessError::Config(format!("suite {}: {e}", s.id)))?;
            for &d in &self.delays {
                if 2 * d.max(1) > self.policy.horizon + usize::from(d == 0) {
                    return bad(format!(
                        "delay {d} cannot be scheduled with horizon {} (needs 2*max(d,1) <= H)",
                        self.policy.horizon
                    ));
                }
            }
        }
        Ok(())
    }

    /// Policy parameters for one suite.
    pub fn policy_for(&self, suite: &SuiteConfig) -> OraclePolicyParams {
        OraclePolicyParams {
            modes: suite.modes,
            dynamics_gain: suite.env.dynamics_gain,
            ..self.policy.clone()
        }
    }

    pub fn suite_weights(&self) -> Vec<(String, u64)> {
        self.suites.iter().map(|s| (s.id.clone(), s.weight)).collect()
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), HarnessError> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override {item:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(HarnessError::Config(format!("bad key path {path:?}")));
    }
    let value = parse_value(raw.trim());
    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut cursor = table;
    for key in parents {
        let entry = cursor
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("{key} is not a table")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

/// A TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    doc.parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
