//! Run configuration: TOML parsing, validation and canonical form.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use phi4_core::{ActionModel, Grid, RenormSchedule, TestFunction, UpdateKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Sample,
    VerifyDyson,
    VerifyInequalities,
    ScanRenorm,
    RateFunction,
    Concentration,
    AcceptanceSuite,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Sample => "sample",
            Experiment::VerifyDyson => "verify-dyson",
            Experiment::VerifyInequalities => "verify-inequalities",
            Experiment::ScanRenorm => "scan-renorm",
            Experiment::RateFunction => "rate-function",
            Experiment::Concentration => "concentration",
            Experiment::AcceptanceSuite => "acceptance-suite",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub d: usize,
    #[serde(rename = "N")]
    pub sites: usize,
    #[serde(rename = "L")]
    pub length: f64,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub steps: usize,
    pub burn_in: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub thinning: usize,
    #[serde(default = "one")]
    pub chains: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<UpdateKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_width: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TestFunctionSpec {
    GaussianBump { center: Vec<f64>, width: f64 },
    Indicator { lo: Vec<f64>, hi: Vec<f64> },
    Constant { value: f64 },
}

impl TestFunctionSpec {
    pub fn build(&self, grid: Grid) -> phi4_core::Result<TestFunction> {
        match self {
            TestFunctionSpec::GaussianBump { center, width } => TestFunction::gaussian_bump(grid, center, *width),
            TestFunctionSpec::Indicator { lo, hi } => TestFunction::indicator(grid, lo, hi),
            TestFunctionSpec::Constant { value } => Ok(TestFunction::constant(grid, *value)),
        }
    }
}

/// Evenly spaced grid `min..=max` with `points` entries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl RangeSpec {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        (0..self.points)
            .map(|i| self.min + (self.max - self.min) * i as f64 / (self.points - 1) as f64)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cost {
    S,
    M,
    L,
}

fn default_t() -> Vec<f64> {
    vec![0.25, 0.5]
}
fn default_multipliers() -> Vec<f64> {
    vec![1.0, 4.0, 8.0]
}
fn default_free_samples() -> usize {
    10_000
}
fn default_theta() -> RangeSpec {
    RangeSpec { min: -2.0, max: 2.0, points: 81 }
}
fn default_y() -> RangeSpec {
    RangeSpec { min: -1.0, max: 1.0, points: 41 }
}
fn default_blocks() -> u32 {
    2
}
fn default_cost() -> Cost {
    Cost::M
}

/// Experiment-specific settings; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    /// Generating-functional parameters.
    #[serde(default = "default_t")]
    pub t_values: Vec<f64>,
    /// Free samples for the shifted-measure side and reweighting.
    #[serde(default = "default_free_samples")]
    pub free_samples: usize,
    /// Include the sixth-moment identity (skipped above N = 8 otherwise).
    #[serde(default)]
    pub moment6: bool,
    #[serde(default = "default_theta")]
    pub theta_grid: RangeSpec,
    #[serde(default = "default_y")]
    pub y_grid: RangeSpec,
    #[serde(default = "default_blocks")]
    pub blocks_per_side: u32,
    /// Σ-set tolerance; half the constant-path minimum when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Multipliers of gₙ for concentration runs.
    #[serde(default = "default_multipliers")]
    pub scale_multipliers: Vec<f64>,
    /// Endpoint ratio bound for the scan trend, when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_ratio: Option<f64>,
    /// Acceptance criteria to run; empty means all within `max_cost`.
    #[serde(default)]
    pub criteria: Vec<u32>,
    #[serde(default = "default_cost")]
    pub max_cost: Cost,
}

impl Default for Options {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub output_dir: PathBuf,
    pub n_list: Vec<u32>,
    pub grid: GridSpec,
    pub schedule: RenormSchedule,
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub test_functions: Vec<TestFunctionSpec>,
    #[serde(default)]
    pub options: Options,
}

/// One invalid field.
#[derive(Clone, Debug, PartialEq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

/// Every problem found in a configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub issues: Vec<Issue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for i in &self.issues {
            writeln!(f, "  {}: {}", i.path, i.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn single(path: &str, message: impl Into<String>) -> Self {
        Self {
            issues: vec![Issue {
                path: path.into(),
                message: message.into(),
            }],
        }
    }
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        let path = e
            .span()
            .map(|s| {
                let line = text[..s.start].matches('\n').count() + 1;
                format!("line {line}")
            })
            .unwrap_or_else(|| "<root>".into());
        ConfigError::single(&path, msg)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::single(&path.display().to_string(), e.to_string()))?;
    parse_config_str(&text)
}

impl RunConfig {
    /// Canonical TOML text; parsing it yields an equal configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.grid.d, self.grid.sites, self.grid.length).expect("validated grid")
    }

    pub fn test_functions(&self) -> Vec<TestFunction> {
        let g = self.grid();
        self.test_functions
            .iter()
            .map(|s| s.build(g).expect("validated test function"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        let mut push = |path: &str, message: String| {
            issues.push(Issue {
                path: path.into(),
                message,
            })
        };
        let grid = match Grid::new(self.grid.d, self.grid.sites, self.grid.length) {
            Ok(g) => Some(g),
            Err(e) => {
                push("grid", e.to_string());
                None
            }
        };
        if self.n_list.is_empty() {
            push("n_list", "must list at least one cutoff".into());
        }
        for (i, &n) in self.n_list.iter().enumerate() {
            if n == 0 {
                push(&format!("n_list[{i}]"), "cutoff must be at least 1".into());
            }
        }
        let s = &self.sampler;
        if s.burn_in >= s.steps {
            push("sampler.burn_in", format!("{} must be below steps = {}", s.burn_in, s.steps));
        }
        if s.thinning == 0 {
            push("sampler.thinning", "must be at least 1".into());
        }
        if s.chains == 0 {
            push("sampler.chains", "must be at least 1".into());
        }
        if let Some(w) = s.proposal_width {
            if !(w > 0.0 && w.is_finite()) {
                push("sampler.proposal_width", format!("must be positive, got {w}"));
            }
        }
        for (field, seq) in [("g", &self.schedule.g), ("m", &self.schedule.m), ("a", &self.schedule.a)] {
            for &n in self.n_list.iter().filter(|n| **n > 0) {
                if let Err(e) = seq.at(n) {
                    push(&format!("schedule.{field}"), e.to_string());
                }
            }
        }
        for &n in self.n_list.iter().filter(|n| **n > 0) {
            if let Ok(g) = self.schedule.g.at(n) {
                if g < 0.0 {
                    push("schedule.g", format!("negative at n = {n}"));
                }
            }
        }
        if let Some(g) = grid {
            for (i, spec) in self.test_functions.iter().enumerate() {
                match spec.build(g) {
                    Ok(f) => {
                        if self.experiment == Experiment::VerifyInequalities && !f.is_nonneg() {
                            push(&format!("test_functions[{i}]"), "must be nonnegative".into());
                        }
                    }
                    Err(e) => push(&format!("test_functions[{i}]"), e.to_string()),
                }
            }
        }
        let needed = match self.experiment {
            Experiment::VerifyDyson | Experiment::ScanRenorm => 1,
            Experiment::VerifyInequalities => 4,
            _ => 0,
        };
        if self.test_functions.len() < needed {
            push(
                "test_functions",
                format!("{} needs at least {needed}, got {}", self.experiment.name(), self.test_functions.len()),
            );
        }
        let o = &self.options;
        for (name, r) in [("options.theta_grid", &o.theta_grid), ("options.y_grid", &o.y_grid)] {
            if r.points < 2 || !(r.max > r.min) {
                push(name, "needs max > min and at least 2 points".into());
            }
        }
        if o.blocks_per_side == 0 {
            push("options.blocks_per_side", "must be at least 1".into());
        } else if !self.grid.sites.is_multiple_of(o.blocks_per_side as usize) {
            push(
                "options.blocks_per_side",
                format!("{} does not divide N = {}", o.blocks_per_side, self.grid.sites),
            );
        }
        if let Some(e) = o.epsilon {
            if !(e > 0.0) {
                push("options.epsilon", format!("must be positive, got {e}"));
            }
        }
        if o.scale_multipliers.iter().any(|k| !(*k > 0.0)) {
            push("options.scale_multipliers", "multipliers must be positive".into());
        }
        if o.free_samples < 50 {
            push("options.free_samples", "at least 50 needed".into());
        }
        for (i, &c) in o.criteria.iter().enumerate() {
            if !(1..=13).contains(&c) {
                push(&format!("options.criteria[{i}]"), format!("no criterion {c}"));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { issues })
        }
    }

    pub fn model(&self, lattice: std::sync::Arc<phi4_core::Lattice>, n: u32) -> phi4_core::Result<ActionModel> {
        ActionModel::new(lattice, &self.schedule, n)
    }

    pub fn chain_config(&self, chain_id: u64) -> phi4_core::ChainConfig {
        let s = &self.sampler;
        let mut c = phi4_core::ChainConfig::new(s.steps, s.burn_in, s.seed);
        c.chain_id = chain_id;
        c.thinning = s.thinning;
        if let Some(k) = s.kernel {
            c.kernel = k;
        }
        if let Some(w) = s.proposal_width {
            c.proposal_width = w;
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const MINIMAL: &str = r#"
experiment = "verify-dyson"
output_dir = "out"
n_list = [2]

[grid]
d = 2
N = 8
L = 1.0

[schedule]
g = 0.1
m = { base = 0.05, exponent = 0.0 }
a = { table = { "2" = 0.05 } }

[sampler]
steps = 2000
burn_in = 200
seed = 7

[[test_functions]]
shape = "gaussian-bump"
center = [0.5, 0.5]
width = 0.2
"#;

    #[test]
    fn canonical_round_trip() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        let text = cfg.canonical();
        let again = parse_config_str(&text).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.canonical(), text);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("seed = 7", "seed = 7\nsead = 8");
        let err = parse_config_str(&text).unwrap_err();
        assert!(err.to_string().contains("sead"), "{err}");
    }

    #[test]
    fn missing_seed_is_reported() {
        let err = parse_config_str(&MINIMAL.replace("seed = 7", "")).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn every_invalid_field_is_listed() {
        let text = MINIMAL
            .replace("N = 8", "N = 0")
            .replace("burn_in = 200", "burn_in = 5000")
            .replace("n_list = [2]", "n_list = [0]");
        let err = parse_config_str(&text).unwrap_err();
        let paths: Vec<&str> = err.issues.iter().map(|i| i.path.as_str()).collect();
        for p in ["grid", "sampler.burn_in", "n_list[0]"] {
            assert!(paths.contains(&p), "{paths:?}");
        }
    }
}
