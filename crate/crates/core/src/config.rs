//! Experiment configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::EtaMode;
use crate::crab::OptimizerConfig;
use crate::dynamics::Method;
use crate::models::{ModelKind, ModelSpec, DEFAULT_DIMENSION_CAP, DEFAULT_INITIAL_FIELD};
use crate::protocols::{NoiseSpec, QuenchSpec};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

/// Which initial state a return path starts from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    /// Disordered state at the entropy plateau.
    MaximalEntropy,
    /// Eigenstate nearest the middle of the spectrum.
    Center,
}

impl Transition {
    pub fn label(self) -> &'static str {
        match self {
            Transition::MaximalEntropy => "maximal_entropy",
            Transition::Center => "center",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "maximal_entropy" => Some(Transition::MaximalEntropy),
            "center" => Some(Transition::Center),
            _ => None,
        }
    }
}

/// Endpoints of the linear guess ramp. `from = None` starts at the field of
/// the state being returned, `to = None` ends at the initial field.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuessRamp {
    #[serde(default)]
    pub from: Option<f64>,
    #[serde(default)]
    pub to: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    /// Return-path duration; `None` means 50 for Ising kinds and 100 for LMG.
    #[serde(default)]
    pub total_time: Option<f64>,
    #[serde(default = "d_n_f")]
    pub n_f: Vec<usize>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub guess: GuessRamp,
    #[serde(default = "d_transitions")]
    pub transitions: Vec<Transition>,
    /// Infidelity counted as full control in scan tables.
    #[serde(default = "d_solved")]
    pub solved_below: f64,
    /// Points at or below this are treated as the optimizer floor and left out of decay fits.
    #[serde(default = "d_fit_floor")]
    pub fit_floor: f64,
    #[serde(default = "d_eta")]
    pub eta: EtaMode,
}

fn d_n_f() -> Vec<usize> {
    vec![10]
}
fn d_transitions() -> Vec<Transition> {
    vec![Transition::MaximalEntropy, Transition::Center]
}
fn d_solved() -> f64 {
    1e-2
}
fn d_fit_floor() -> f64 {
    1e-8
}
fn d_eta() -> EtaMode {
    EtaMode::Free
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            total_time: None,
            n_f: d_n_f(),
            optimizer: OptimizerConfig::default(),
            guess: GuessRamp::default(),
            transitions: d_transitions(),
            solved_below: d_solved(),
            fit_floor: d_fit_floor(),
            eta: d_eta(),
        }
    }
}

impl ControlConfig {
    pub fn total_time_for(&self, kind: ModelKind) -> f64 {
        self.total_time.unwrap_or(match kind {
            ModelKind::Lmg => 100.0,
            _ => 50.0,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "d_xi")]
    pub xi: Vec<f64>,
    /// Noise seed `j` of a grid point is `seed + j`, shared across ξ values.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_noise_seeds")]
    pub seeds: usize,
    #[serde(default = "d_correlation")]
    pub correlation_step: usize,
    /// Infidelity level defining the crossing threshold ξ*.
    #[serde(default = "d_threshold")]
    pub threshold: f64,
}

fn d_xi() -> Vec<f64> {
    let mut xi = vec![0.0];
    xi.extend((-10..=0).map(|k| 10f64.powi(k)));
    xi
}
fn d_noise_seeds() -> usize {
    10
}
fn d_correlation() -> usize {
    1
}
fn d_threshold() -> f64 {
    0.1
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            xi: d_xi(),
            seed: 0,
            seeds: d_noise_seeds(),
            correlation_step: d_correlation(),
            threshold: d_threshold(),
        }
    }
}

impl NoiseConfig {
    pub fn spec(&self, xi: f64, j: usize) -> NoiseSpec {
        NoiseSpec {
            xi,
            seed: self.seed + j as u64,
            correlation_step: self.correlation_step,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// System sizes; empty means the model's own `n`.
    #[serde(default)]
    pub n: Vec<usize>,
    /// Disordering seeds per size; seed `s` is `quench.seed + s`.
    #[serde(default = "d_seeds")]
    pub seeds: usize,
    /// Longitudinal fields compared by the scaling command.
    #[serde(default = "d_jx")]
    pub jx: Vec<f64>,
}

fn d_seeds() -> usize {
    1
}
fn d_jx() -> Vec<f64> {
    vec![0.0, 0.5]
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n: Vec::new(),
            seeds: d_seeds(),
            jx: d_jx(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Decay tables written by `freq-scan` or `scaling`, relative to the config file.
    #[serde(default)]
    pub tables: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    /// Step size; `None` picks `default_dt` of each pulse duration.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "d_initial_field")]
    pub initial_field: f64,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub quench: QuenchSpec,
    /// Trajectory sampling interval in steps.
    #[serde(default = "d_stride")]
    pub record_stride: usize,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn d_initial_field() -> f64 {
    DEFAULT_INITIAL_FIELD
}
fn d_stride() -> usize {
    100
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec) -> Self {
        Self {
            model,
            dt: None,
            initial_field: d_initial_field(),
            method: Method::Auto,
            quench: QuenchSpec::default(),
            record_stride: d_stride(),
            control: ControlConfig::default(),
            noise: NoiseConfig::default(),
            sweep: SweepConfig::default(),
            fit: FitConfig::default(),
            output: None,
        }
    }

    pub fn from_json(text: &str, path: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.into(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Shifts every seed (disordering, noise, optimizer) by `offset`.
    pub fn with_seed_offset(mut self, offset: u64) -> Self {
        self.quench.seed += offset;
        self.noise.seed += offset;
        self.control.optimizer.seed += offset;
        self
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = None;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// System sizes swept by scan commands.
    pub fn sizes(&self) -> Vec<usize> {
        if self.sweep.n.is_empty() {
            vec![self.model.n]
        } else {
            self.sweep.n.clone()
        }
    }

    pub fn model_at(&self, n: usize) -> ModelSpec {
        ModelSpec {
            n,
            ..self.model.clone()
        }
    }

    pub fn dt_for(&self, total_time: f64) -> f64 {
        self.dt.unwrap_or_else(|| crate::dynamics::default_dt(total_time))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let models: Vec<ModelSpec> = self.sizes().into_iter().map(|n| self.model_at(n)).collect();
        for m in &models {
            m.validate()
                .map_err(|e| invalid("model", e.to_string()))?;
            check_dimension(m, m.jx != 0.0)?;
        }
        if let Some(dt) = self.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(invalid("dt", format!("must be positive, got {dt}")));
            }
        }
        if !self.initial_field.is_finite() {
            return Err(invalid("initial_field", "must be finite"));
        }
        self.quench
            .validate()
            .map_err(|e| invalid("quench", e.to_string()))?;
        if self.record_stride == 0 {
            return Err(invalid("record_stride", "must be at least 1"));
        }

        let c = &self.control;
        if let Some(t) = c.total_time {
            if !(t.is_finite() && t > 0.0) {
                return Err(invalid("control.total_time", format!("must be positive, got {t}")));
            }
        }
        if c.n_f.is_empty() {
            return Err(invalid("control.n_f", "must list at least one value"));
        }
        if c.n_f.contains(&0) {
            return Err(invalid("control.n_f", "values must be at least 1"));
        }
        if c.n_f.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("control.n_f", "values must be strictly increasing"));
        }
        c.optimizer
            .validate()
            .map_err(|e| invalid("control.optimizer", e.to_string()))?;
        for (name, v) in [("control.guess.from", c.guess.from), ("control.guess.to", c.guess.to)] {
            if v.is_some_and(|v| !v.is_finite()) {
                return Err(invalid(name, "must be finite"));
            }
        }
        if c.transitions.is_empty() {
            return Err(invalid("control.transitions", "must list at least one transition"));
        }
        if !(c.solved_below > 0.0 && c.solved_below < 1.0) {
            return Err(invalid("control.solved_below", "must lie in (0, 1)"));
        }
        if !(c.fit_floor >= 0.0 && c.fit_floor < 1.0) {
            return Err(invalid("control.fit_floor", "must lie in [0, 1)"));
        }
        if let EtaMode::Fixed(eta) = c.eta {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(invalid("control.eta", "fixed exponent must be positive"));
            }
        }

        let n = &self.noise;
        if n.xi.is_empty() {
            return Err(invalid("noise.xi", "must list at least one value"));
        }
        if n.xi.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("noise.xi", "values must be strictly increasing"));
        }
        for &xi in &n.xi {
            n.spec(xi, 0)
                .validate()
                .map_err(|e| invalid("noise", e.to_string()))?;
        }
        if n.seeds == 0 {
            return Err(invalid("noise.seeds", "must be at least 1"));
        }
        if !(n.threshold > 0.0 && n.threshold < 1.0) {
            return Err(invalid("noise.threshold", "must lie in (0, 1)"));
        }

        let s = &self.sweep;
        if s.seeds == 0 {
            return Err(invalid("sweep.seeds", "must be at least 1"));
        }
        if s.n.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("sweep.n", "values must be strictly increasing"));
        }
        if s.jx.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sweep.jx", "values must be finite"));
        }
        Ok(())
    }

    /// Extra checks for the scaling command, which builds full-space Ising chains.
    pub fn validate_scaling(&self) -> Result<(), ConfigError> {
        if self.model.kind == ModelKind::Lmg {
            return Err(invalid("model.kind", "scaling compares Ising chains"));
        }
        if self.sweep.jx.is_empty() {
            return Err(invalid("sweep.jx", "must list at least one value"));
        }
        for n in self.sizes() {
            check_dimension(&self.model_at(n), true)?;
        }
        Ok(())
    }
}

/// Rejects sizes whose (full-space when `full`) dimension exceeds the build cap.
fn check_dimension(spec: &ModelSpec, full: bool) -> Result<(), ConfigError> {
    let dimension = match spec.kind {
        ModelKind::Lmg => spec.n / 2 + 1,
        _ if spec.n >= 63 => usize::MAX,
        _ if full => 1usize << spec.n,
        _ => 1usize << (spec.n - 1),
    };
    let cap = DEFAULT_DIMENSION_CAP;
    if dimension > cap {
        return Err(invalid(
            "model.n",
            format!("N = {} gives dimension {dimension} above the cap of {cap}", spec.n),
        ));
    }
    Ok(())
}
