//! The five `revctl` commands as library calls. Each returns its report plus
//! the files it would write; nothing touches the filesystem until
//! [`CommandOutput::write_to`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{fit_report, CurveRow, FitReport};
use crate::config::{ConfigError, ExperimentConfig, Transition};
use crate::crab::{optimize, CrabError, CrabProblem, OptimizationReport};
use crate::dynamics::{diagonal_entropy_in, infidelity, record_trajectory, DynamicsError, Propagator, Pulse, StateVector, TrajectoryRecord};
use crate::models::{critical_gap, symmetric_center_state, ground_state, BuildOptions, Model, ModelError, ModelKind, ModelSpec};
use crate::protocols::{add_noise, linear_ramp, random_quench_pulse, time_reversed_pulse, ProtocolError, QuenchSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn version_line() -> String {
    format!("revctl {VERSION}")
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {message}")]
    Table { path: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Crab(#[from] CrabError),
    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },
}

impl ExperimentError {
    /// 2 for bad input, 1 for anything that failed mid-run.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Table { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Quench,
    Reverse,
    FreqScan,
    Scaling,
    Fit,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Quench => "quench",
            Command::Reverse => "reverse",
            Command::FreqScan => "freq-scan",
            Command::Scaling => "scaling",
            Command::Fit => "fit",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommandOutput {
    pub files: Vec<OutputFile>,
    /// False when some optimization or fit finished without converging.
    pub converged: bool,
}

impl CommandOutput {
    pub fn exit_code(&self) -> i32 {
        if self.converged {
            0
        } else {
            3
        }
    }

    pub fn file(&self, name: &str) -> Option<&str> {
        self.files
            .iter()
            .find(|f| f.name == name)
            .map(|f| f.contents.as_str())
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), ExperimentError> {
        let fail = |path: &Path, e: std::io::Error| ExperimentError::Write {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(|e| fail(dir, e))?;
        for f in &self.files {
            let path = dir.join(&f.name);
            std::fs::write(&path, &f.contents).map_err(|e| fail(&path, e))?;
        }
        Ok(())
    }
}

/// Provenance stamped on every output file.
#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub command: Command,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(command: Command, config: &ExperimentConfig) -> Self {
        Self {
            command,
            config_hash: config.hash(),
        }
    }

    pub fn csv(&self, name: &str, body: &str) -> OutputFile {
        OutputFile {
            name: name.into(),
            contents: format!(
                "# {}\n# command {}\n# config_sha256 {}\n{body}",
                version_line(),
                self.command.name(),
                self.config_hash
            ),
        }
    }

    pub fn json(&self, name: &str, report: &impl Serialize) -> OutputFile {
        let value = serde_json::json!({
            "version": version_line(),
            "command": self.command.name(),
            "config_sha256": self.config_hash,
            "report": report,
        });
        let mut contents = serde_json::to_string_pretty(&value).expect("report serializes");
        contents.push('\n');
        OutputFile {
            name: name.into(),
            contents,
        }
    }
}

/// Runs one command. `base_dir` resolves relative paths inside the config.
pub fn run(command: Command, config: &ExperimentConfig, base_dir: &Path) -> Result<CommandOutput, ExperimentError> {
    config.validate()?;
    match command {
        Command::Quench => cmd_quench(config).map(|r| r.output),
        Command::Reverse => cmd_reverse(config).map(|r| r.output),
        Command::FreqScan => cmd_freq_scan(config).map(|r| r.output),
        Command::Scaling => cmd_scaling(config).map(|r| r.output),
        Command::Fit => cmd_fit(config, base_dir).map(|r| r.output),
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `ln(N/2 + 1)` for LMG, `(N/2)·ln 2` for Ising kinds.
pub fn reference_entropy(spec: &ModelSpec) -> f64 {
    match spec.kind {
        ModelKind::Lmg => ((spec.n / 2 + 1) as f64).ln(),
        _ => spec.n as f64 / 2.0 * std::f64::consts::LN_2,
    }
}

/// Critical gap of the chain without its longitudinal field; `t_max`
/// defaults to 100 over this.
pub fn reference_gap(spec: &ModelSpec) -> Result<f64, ModelError> {
    let mut r = spec.clone();
    if r.kind == ModelKind::IsingChainLongitudinal {
        r.kind = ModelKind::IsingChain;
        r.jx = 0.0;
    }
    critical_gap(&Model::build(&r)?)
}

pub fn quench_t_max(quench: &QuenchSpec, spec: &ModelSpec) -> Result<f64, ModelError> {
    match quench.t_max {
        Some(t) => Ok(t),
        None => Ok(100.0 / reference_gap(spec)?),
    }
}

/// Segments in the plateau window: the last 20%, at least one.
pub fn plateau_window(segments: usize) -> usize {
    (segments as f64 * 0.2).ceil().max(1.0) as usize
}

/// Relative change between the two halves of the plateau window below which
/// the plateau counts as reached.
pub const PLATEAU_TOLERANCE: f64 = 0.02;

/// A state counts as maximal-entropy when within this fraction of the plateau.
pub const MAXIMAL_ENTROPY_BAND: f64 = 0.1;

/// One disordering run, sampled at segment ends.
#[derive(Clone, Debug)]
pub struct Disordering {
    pub seed: u64,
    pub t_max: f64,
    pub dt: f64,
    pub pulse: Option<Pulse>,
    /// Field of each segment.
    pub fields: Vec<f64>,
    /// Time at the end of each segment.
    pub end_times: Vec<f64>,
    /// `S_d` at the end of each segment, in that segment's eigenbasis.
    pub entropy: Vec<f64>,
    /// Mean of `entropy` over the plateau window; `S_d` of the initial state
    /// when there are no segments.
    pub plateau: f64,
    pub stable: bool,
    pub states: Vec<StateVector>,
    pub initial: StateVector,
    pub initial_field: f64,
}

impl Disordering {
    pub fn duration(&self) -> f64 {
        self.end_times.last().copied().unwrap_or(0.0)
    }

    pub fn final_state(&self) -> &StateVector {
        self.states.last().unwrap_or(&self.initial)
    }

    /// Latest segment end within 10% of the plateau: index, state, field, `S_d`.
    pub fn maximal_entropy(&self) -> (Option<usize>, &StateVector, f64, f64) {
        let band = MAXIMAL_ENTROPY_BAND * self.plateau;
        let pick = (0..self.entropy.len())
            .rev()
            .find(|&k| (self.entropy[k] - self.plateau).abs() <= band)
            .or(self.entropy.len().checked_sub(1));
        match pick {
            Some(k) => (Some(k), &self.states[k], self.fields[k], self.entropy[k]),
            None => (None, &self.initial, self.initial_field, self.plateau),
        }
    }
}

/// Runs the random quench from `psi0` segment by segment.
pub fn disorder(
    propagator: &mut Propagator,
    psi0: &StateVector,
    initial_field: f64,
    quench: &QuenchSpec,
    t_max: f64,
    dt: f64,
) -> Result<Disordering, ExperimentError> {
    let mut out = Disordering {
        seed: quench.seed,
        t_max,
        dt,
        pulse: None,
        fields: Vec::new(),
        end_times: Vec::new(),
        entropy: Vec::new(),
        plateau: 0.0,
        stable: true,
        states: Vec::new(),
        initial: psi0.clone(),
        initial_field,
    };
    if quench.n_cycles == 0 {
        out.plateau = diagonal_entropy_in(psi0, &propagator.spectrum(initial_field));
        return Ok(out);
    }
    let qp = random_quench_pulse(quench, t_max, dt)?;
    let mut psi = psi0.clone();
    let mut start = 0;
    for &steps in &qp.segment_steps {
        let field = qp.pulse.samples[start];
        start += steps;
        psi = propagator.propagate(&Pulse::constant(qp.pulse.dt, steps, field), &psi)?;
        out.fields.push(field);
        out.end_times.push(start as f64 * qp.pulse.dt);
        out.entropy.push(diagonal_entropy_in(&psi, &propagator.spectrum(field)));
        out.states.push(psi.clone());
    }
    let w = plateau_window(out.entropy.len());
    let window = &out.entropy[out.entropy.len() - w..];
    out.plateau = mean(window);
    if w >= 2 {
        let (a, b) = window.split_at(w / 2);
        out.stable = (mean(b) - mean(a)).abs() <= PLATEAU_TOLERANCE * out.plateau.abs();
    }
    out.pulse = Some(qp.pulse);
    Ok(out)
}

// ---------------------------------------------------------------- quench

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuenchSeedSummary {
    pub seed: u64,
    pub duration: f64,
    pub segments: usize,
    pub plateau: f64,
    pub stable: bool,
    pub final_entropy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuenchReport {
    pub model: ModelSpec,
    pub dimension: usize,
    pub t_max: f64,
    pub dt: f64,
    /// `ln(N/2+1)` for LMG and `(N/2)·ln 2` for Ising kinds.
    pub reference_entropy: f64,
    pub ln_dimension: f64,
    pub seeds: Vec<QuenchSeedSummary>,
    pub mean_plateau: f64,
    pub plateau_ratio: f64,
    pub all_stable: bool,
}

pub struct QuenchRun {
    pub report: QuenchReport,
    pub trajectories: Vec<(u64, TrajectoryRecord)>,
    pub output: CommandOutput,
}

pub fn cmd_quench(config: &ExperimentConfig) -> Result<QuenchRun, ExperimentError> {
    config.validate()?;
    let prov = Provenance::new(Command::Quench, config);
    let model = Model::build(&config.model)?;
    let t_max = quench_t_max(&config.quench, &config.model)?;
    let dt = config.dt.unwrap_or(0.01);
    let psi0 = ground_state(&model, config.initial_field)?.state;

    let mut base = Propagator::for_model(&model, config.method);
    for field in [config.quench.gamma1, config.quench.gamma2, config.initial_field] {
        base.spectrum(field);
    }
    let seeds: Vec<u64> = (0..config.sweep.seeds as u64).map(|s| config.quench.seed + s).collect();
    let runs: Vec<Result<(QuenchSeedSummary, TrajectoryRecord, Disordering), ExperimentError>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut prop = base.clone();
            let quench = QuenchSpec {
                seed,
                ..config.quench.clone()
            };
            let dis = disorder(&mut prop, &psi0, config.initial_field, &quench, t_max, dt)?;
            let record = match &dis.pulse {
                Some(p) => record_trajectory(&mut prop, p, &psi0, &psi0, config.record_stride)?.0,
                None => TrajectoryRecord {
                    times: vec![0.0],
                    entropy: vec![dis.plateau],
                    infidelity: vec![0.0],
                },
            };
            let summary = QuenchSeedSummary {
                seed,
                duration: dis.duration(),
                segments: dis.entropy.len(),
                plateau: dis.plateau,
                stable: dis.stable,
                final_entropy: dis.entropy.last().copied().unwrap_or(dis.plateau),
            };
            Ok((summary, record, dis))
        })
        .collect();

    let mut summaries = Vec::new();
    let mut trajectories = Vec::new();
    let mut traj_csv = String::from("seed,time,s_d,infidelity\n");
    let mut seg_csv = String::from("seed,segment,field,time,s_d\n");
    for run in runs {
        let (summary, record, dis) = run?;
        for i in 0..record.len() {
            let _ = writeln!(
                traj_csv,
                "{},{},{},{}",
                summary.seed, record.times[i], record.entropy[i], record.infidelity[i]
            );
        }
        for k in 0..dis.entropy.len() {
            let _ = writeln!(
                seg_csv,
                "{},{},{},{},{}",
                summary.seed, k, dis.fields[k], dis.end_times[k], dis.entropy[k]
            );
        }
        trajectories.push((summary.seed, record));
        summaries.push(summary);
    }
    let plateaus: Vec<f64> = summaries.iter().map(|s| s.plateau).collect();
    let reference = reference_entropy(&config.model);
    let mean_plateau = mean(&plateaus);
    let report = QuenchReport {
        model: config.model.clone(),
        dimension: model.dimension(),
        t_max,
        dt,
        reference_entropy: reference,
        ln_dimension: (model.dimension() as f64).ln(),
        mean_plateau,
        plateau_ratio: mean_plateau / reference,
        all_stable: summaries.iter().all(|s| s.stable),
        seeds: summaries,
    };
    let output = CommandOutput {
        files: vec![
            prov.csv("quench_trajectories.csv", &traj_csv),
            prov.csv("quench_segments.csv", &seg_csv),
            prov.json("quench_summary.json", &report),
        ],
        converged: true,
    };
    Ok(QuenchRun {
        report,
        trajectories,
        output,
    })
}

// ---------------------------------------------------------------- reverse

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnMethod {
    Reversed,
    Optimized,
}

impl ReturnMethod {
    pub fn label(self) -> &'static str {
        match self {
            ReturnMethod::Reversed => "reversed",
            ReturnMethod::Optimized => "optimized",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoisyReturn {
    pub method: ReturnMethod,
    pub xi: f64,
    pub noise_seed: u64,
    pub infidelity: f64,
    /// `S_d` of the returned state in the initial-field eigenbasis.
    pub entropy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReverseRow {
    pub method: ReturnMethod,
    pub xi: f64,
    pub median_infidelity: f64,
    pub median_entropy: f64,
    pub seeds: usize,
}

/// Noise level at which the seed-median infidelity first reaches the threshold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Crossing {
    pub method: ReturnMethod,
    /// Log-log interpolated crossing, or the largest grid value when the
    /// threshold is never reached (`censored`).
    pub xi_star: Option<f64>,
    pub censored: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReverseReport {
    pub model: ModelSpec,
    pub dimension: usize,
    pub disordering_time: f64,
    pub disordered_entropy: f64,
    pub control_time: f64,
    pub n_f: usize,
    pub optimized_infidelity: f64,
    pub optimizer_converged: bool,
    pub threshold: f64,
    pub rows: Vec<ReverseRow>,
    pub crossings: Vec<Crossing>,
    /// `ξ*(optimized)/ξ*(reversed)`; a lower bound when the optimized crossing is censored.
    pub ratio: Option<f64>,
    pub ratio_is_lower_bound: bool,
}

impl ReverseReport {
    pub fn crossing(&self, method: ReturnMethod) -> &Crossing {
        self.crossings
            .iter()
            .find(|c| c.method == method)
            .expect("both methods reported")
    }

    pub fn row(&self, method: ReturnMethod, xi: f64) -> Option<&ReverseRow> {
        self.rows.iter().find(|r| r.method == method && r.xi == xi)
    }
}

pub struct ReverseRun {
    pub report: ReverseReport,
    pub runs: Vec<NoisyReturn>,
    pub optimization: OptimizationReport,
    pub output: CommandOutput,
}

/// First crossing of `threshold` by `(ξ, median I)` rows sorted by ξ.
pub fn crossing(method: ReturnMethod, rows: &[(f64, f64)], threshold: f64) -> Crossing {
    for (k, &(xi, med)) in rows.iter().enumerate() {
        if med < threshold {
            continue;
        }
        let xi_star = match k.checked_sub(1).map(|j| rows[j]) {
            Some((x0, m0)) if x0 > 0.0 && m0 > 0.0 => {
                let f = (threshold.ln() - m0.ln()) / (med.ln() - m0.ln());
                (x0.ln() + f * (xi.ln() - x0.ln())).exp()
            }
            _ => xi,
        };
        return Crossing {
            method,
            xi_star: Some(xi_star),
            censored: false,
        };
    }
    Crossing {
        method,
        xi_star: rows.last().map(|r| r.0),
        censored: true,
    }
}

pub fn cmd_reverse(config: &ExperimentConfig) -> Result<ReverseRun, ExperimentError> {
    config.validate()?;
    let prov = Provenance::new(Command::Reverse, config);
    let model = Model::build(&config.model)?;
    let t_max = quench_t_max(&config.quench, &config.model)?;
    let dt = config.dt.unwrap_or(0.01);
    let psi0 = ground_state(&model, config.initial_field)?.state;
    let mut prop = Propagator::for_model(&model, config.method);
    let dis = disorder(&mut prop, &psi0, config.initial_field, &config.quench, t_max, dt)?;
    let Some(forward) = dis.pulse.clone() else {
        return Err(ConfigError::Invalid {
            field: "quench.n_cycles".into(),
            message: "reverse needs at least one disordering cycle".into(),
        }
        .into());
    };
    let psi_dis = dis.final_state().clone();
    let back = time_reversed_pulse(&forward);

    let control_time = config.control.total_time_for(config.model.kind);
    let cdt = config.dt_for(control_time);
    let from = config.control.guess.from.unwrap_or(config.quench.gamma2);
    let to = config.control.guess.to.unwrap_or(config.initial_field);
    let guess = linear_ramp(from, to, control_time, cdt);
    let n_f = *config.control.n_f.last().expect("validated non-empty");
    let problem = CrabProblem::new(prop.clone(), psi_dis.clone(), psi0.clone(), guess.clone())?;
    let optimization = optimize(&problem, n_f, &config.control.optimizer)?;
    let control = optimization.control(&guess)?.render();

    let initial_spectrum = prop.spectrum(config.initial_field);
    let noise = &config.noise;
    let units: Vec<(ReturnMethod, f64, usize)> = [ReturnMethod::Reversed, ReturnMethod::Optimized]
        .into_iter()
        .flat_map(|m| noise.xi.iter().flat_map(move |&xi| (0..noise.seeds).map(move |j| (m, xi, j))))
        .collect();
    // Without noise every seed gives the same run.
    let units: Vec<(ReturnMethod, f64, usize)> = units.into_iter().filter(|u| u.1 != 0.0 || u.2 == 0).collect();
    let runs: Vec<Result<NoisyReturn, ExperimentError>> = units
        .par_iter()
        .map_init(
            || prop.clone(),
            |p, &(method, xi, j)| {
                let spec = noise.spec(xi, j);
                let pulse = match method {
                    ReturnMethod::Reversed => add_noise(&back, &spec)?,
                    ReturnMethod::Optimized => add_noise(&control, &spec)?,
                };
                let psi = p.propagate(&pulse, &psi_dis)?;
                Ok(NoisyReturn {
                    method,
                    xi,
                    noise_seed: spec.seed,
                    infidelity: infidelity(&psi, &psi0)?,
                    entropy: diagonal_entropy_in(&psi, &initial_spectrum),
                })
            },
        )
        .collect();
    let mut runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let noiseless: Vec<NoisyReturn> = runs.iter().filter(|r| r.xi == 0.0).cloned().collect();
    for r in noiseless {
        for j in 1..noise.seeds {
            runs.push(NoisyReturn {
                noise_seed: noise.spec(0.0, j).seed,
                ..r.clone()
            });
        }
    }
    runs.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.xi.total_cmp(&b.xi))
            .then(a.noise_seed.cmp(&b.noise_seed))
    });

    let mut rows = Vec::new();
    let mut crossings = Vec::new();
    for method in [ReturnMethod::Reversed, ReturnMethod::Optimized] {
        let mut medians = Vec::new();
        for &xi in &noise.xi {
            let sel: Vec<&NoisyReturn> = runs.iter().filter(|r| r.method == method && r.xi == xi).collect();
            let inf: Vec<f64> = sel.iter().map(|r| r.infidelity).collect();
            let ent: Vec<f64> = sel.iter().map(|r| r.entropy).collect();
            let row = ReverseRow {
                method,
                xi,
                median_infidelity: median(&inf),
                median_entropy: median(&ent),
                seeds: sel.len(),
            };
            medians.push((xi, row.median_infidelity));
            rows.push(row);
        }
        crossings.push(crossing(method, &medians, noise.threshold));
    }
    let (rev, opt) = (&crossings[0], &crossings[1]);
    let ratio = match (rev.xi_star, opt.xi_star, rev.censored) {
        (Some(r), Some(o), false) if r > 0.0 => Some(o / r),
        _ => None,
    };

    let report = ReverseReport {
        model: config.model.clone(),
        dimension: model.dimension(),
        disordering_time: dis.duration(),
        disordered_entropy: dis.entropy.last().copied().unwrap_or(0.0),
        control_time,
        n_f,
        optimized_infidelity: optimization.best_infidelity,
        optimizer_converged: optimization.converged,
        threshold: noise.threshold,
        ratio,
        ratio_is_lower_bound: opt.censored,
        crossings,
        rows,
    };

    let mut table = String::from("method,xi,median_infidelity,median_s_d,seeds\n");
    for r in &report.rows {
        let _ = writeln!(
            table,
            "{},{},{},{},{}",
            r.method.label(),
            r.xi,
            r.median_infidelity,
            r.median_entropy,
            r.seeds
        );
    }
    let mut runs_csv = String::from("method,xi,noise_seed,infidelity,s_d\n");
    for r in &runs {
        let _ = writeln!(
            runs_csv,
            "{},{},{},{},{}",
            r.method.label(),
            r.xi,
            r.noise_seed,
            r.infidelity,
            r.entropy
        );
    }
    let output = CommandOutput {
        files: vec![
            prov.csv("reverse_table.csv", &table),
            prov.csv("reverse_runs.csv", &runs_csv),
            prov.csv("return_pulse.csv", &control.to_csv()),
            prov.json("reverse_summary.json", &report),
            prov.json("optimization.json", &optimization),
        ],
        converged: optimization.converged,
    };
    Ok(ReverseRun {
        report,
        runs,
        optimization,
        output,
    })
}

// ---------------------------------------------------------------- scans

/// Start state of one return transition at one size.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransitionStart {
    pub transition: Transition,
    /// `S_d` of the start state in the eigenbasis of the ramp's first field.
    pub entropy: f64,
    pub guess_from: f64,
    pub guess_to: f64,
    /// Infidelity of the unoptimized guess.
    pub guess_infidelity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SizeSetup {
    pub jx: f64,
    pub n: usize,
    pub dimension: usize,
    pub control_time: f64,
    pub dt: f64,
    pub disordering_time: f64,
    pub plateau: f64,
    pub starts: Vec<TransitionStart>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanPoint {
    pub jx: f64,
    pub n: usize,
    pub transition: Transition,
    pub n_f: usize,
    /// `None` when the optimization failed; see `error`.
    pub infidelity: Option<f64>,
    pub best_so_far: Option<f64>,
    pub evaluations: usize,
    pub converged: bool,
    pub solved: bool,
    pub r: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanReport {
    pub setups: Vec<SizeSetup>,
    pub points: Vec<ScanPoint>,
    pub fits: FitReport,
}

impl ScanReport {
    pub fn curve(&self, jx: f64, n: usize, transition: Transition) -> Vec<&ScanPoint> {
        self.points
            .iter()
            .filter(|p| p.jx == jx && p.n == n && p.transition == transition)
            .collect()
    }

    fn converged(&self) -> bool {
        self.points.iter().all(|p| p.converged) && self.fits.failed_fits() == 0
    }

    /// Decay table for one `(jx, n)` in the format [`cmd_fit`] reads.
    pub fn table(&self, jx: f64, n: usize) -> String {
        let mut out = String::from("jx,n,transition,n_f,infidelity,best_so_far,evaluations,converged,solved\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in self.points.iter().filter(|p| p.jx == jx && p.n == n) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                p.jx,
                p.n,
                p.transition.label(),
                p.n_f,
                opt(p.infidelity),
                opt(p.best_so_far),
                p.evaluations,
                p.converged,
                p.solved
            );
        }
        out
    }
}

struct Prepared {
    jx: f64,
    model: Model,
    psi_gs: StateVector,
    starts: Vec<(Transition, StateVector, Pulse)>,
    setup: SizeSetup,
}

fn prepare(config: &ExperimentConfig, spec: &ModelSpec, options: BuildOptions) -> Result<Prepared, ExperimentError> {
    let model = Model::build_with(spec, options)?;
    let psi_gs = ground_state(&model, config.initial_field)?.state;
    let mut prop = Propagator::for_model(&model, config.method);
    let control_time = config.control.total_time_for(spec.kind);
    let dt = config.dt_for(control_time);
    let to = config.control.guess.to.unwrap_or(config.initial_field);

    let needs_disorder = config.control.transitions.contains(&Transition::MaximalEntropy);
    let dis = if needs_disorder {
        let t_max = quench_t_max(&config.quench, spec)?;
        Some(disorder(
            &mut prop,
            &psi_gs,
            config.initial_field,
            &config.quench,
            t_max,
            config.dt.unwrap_or(0.01),
        )?)
    } else {
        None
    };

    let mut starts = Vec::new();
    let mut infos = Vec::new();
    for &t in &config.control.transitions {
        let (state, field) = match t {
            Transition::MaximalEntropy => {
                let (_, state, field, _) = dis.as_ref().expect("disordered").maximal_entropy();
                (state.clone(), config.control.guess.from.unwrap_or(field))
            }
            Transition::Center => {
                let from = config.control.guess.from.unwrap_or(config.quench.gamma2);
                (symmetric_center_state(&model, &psi_gs, from).1, from)
            }
        };
        let guess = linear_ramp(field, to, control_time, dt);
        let psi = prop.propagate(&guess, &state)?;
        infos.push(TransitionStart {
            transition: t,
            entropy: diagonal_entropy_in(&state, &prop.spectrum(field)),
            guess_from: field,
            guess_to: to,
            guess_infidelity: infidelity(&psi, &psi_gs)?,
        });
        starts.push((t, state, guess));
    }
    let setup = SizeSetup {
        jx: spec.jx,
        n: spec.n,
        dimension: model.dimension(),
        control_time,
        dt: starts[0].2.dt,
        disordering_time: dis.as_ref().map_or(0.0, |d| d.duration()),
        plateau: dis.as_ref().map_or(0.0, |d| d.plateau),
        starts: infos,
    };
    Ok(Prepared {
        jx: spec.jx,
        model,
        psi_gs,
        starts,
        setup,
    })
}

/// Optimizes every `(size, transition, n_f)` unit. Per-unit failures are
/// recorded in the point and the scan continues.
pub fn scan(config: &ExperimentConfig, specs: &[(ModelSpec, BuildOptions)]) -> Result<ScanReport, ExperimentError> {
    let prepared = specs
        .par_iter()
        .map(|(spec, options)| prepare(config, spec, *options))
        .collect::<Result<Vec<_>, _>>()?;

    let mut units = Vec::new();
    for (i, p) in prepared.iter().enumerate() {
        for k in 0..p.starts.len() {
            for &n_f in &config.control.n_f {
                units.push((i, k, n_f));
            }
        }
    }
    let mut points: Vec<ScanPoint> = units
        .par_iter()
        .map(|&(i, k, n_f)| {
            let p = &prepared[i];
            let (transition, state, guess) = &p.starts[k];
            let mut point = ScanPoint {
                jx: p.jx,
                n: p.model.spec.n,
                transition: *transition,
                n_f,
                infidelity: None,
                best_so_far: None,
                evaluations: 0,
                converged: false,
                solved: false,
                r: Vec::new(),
                a: Vec::new(),
                b: Vec::new(),
                error: None,
            };
            let result = CrabProblem::new(
                Propagator::for_model(&p.model, config.method),
                state.clone(),
                p.psi_gs.clone(),
                guess.clone(),
            )
            .and_then(|problem| optimize(&problem, n_f, &config.control.optimizer));
            match result {
                Ok(rep) => {
                    point.infidelity = Some(rep.best_infidelity);
                    point.evaluations = rep.evaluations;
                    point.converged = rep.converged;
                    point.solved = rep.best_infidelity < config.control.solved_below;
                    point.r = rep.basis.r;
                    point.a = rep.coefficients.a;
                    point.b = rep.coefficients.b;
                }
                Err(e) => {
                    eprintln!(
                        "revctl: N = {} {} n_f = {n_f}: {e}",
                        point.n,
                        transition.label()
                    );
                    point.error = Some(e.to_string());
                }
            }
            point
        })
        .collect();

    // Best-so-far along n_f within each curve; units are already in key order.
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        let restart = i == 0 || {
            let (a, b) = (&points[i - 1], &points[i]);
            a.jx != b.jx || a.n != b.n || a.transition != b.transition
        };
        if restart {
            best = f64::INFINITY;
        }
        if let Some(v) = points[i].infidelity {
            best = best.min(v);
        }
        points[i].best_so_far = best.is_finite().then_some(best);
    }

    let rows: Vec<CurveRow> = points
        .iter()
        .filter_map(|p| {
            p.infidelity.map(|infidelity| CurveRow {
                jx: p.jx,
                transition: p.transition.label().into(),
                n: p.n,
                n_f: p.n_f,
                infidelity,
            })
        })
        .collect();
    let fits = fit_report(&rows, config.control.eta, config.control.fit_floor);
    Ok(ScanReport {
        setups: prepared.into_iter().map(|p| p.setup).collect(),
        points,
        fits,
    })
}

pub struct ScanRun {
    pub report: ScanReport,
    pub output: CommandOutput,
}

fn scan_output(prov: &Provenance, report: &ScanReport, json_name: &str, label_jx: bool) -> CommandOutput {
    let mut files = Vec::new();
    for s in &report.setups {
        let name = if label_jx {
            format!("decay_jx{}_N{}.csv", s.jx, s.n)
        } else {
            format!("decay_N{}.csv", s.n)
        };
        files.push(prov.csv(&name, &report.table(s.jx, s.n)));
    }
    files.push(prov.csv("fits.csv", &report.fits.to_csv()));
    files.push(prov.json(json_name, report));
    CommandOutput {
        files,
        converged: report.converged(),
    }
}

pub fn cmd_freq_scan(config: &ExperimentConfig) -> Result<ScanRun, ExperimentError> {
    config.validate()?;
    let prov = Provenance::new(Command::FreqScan, config);
    let specs: Vec<(ModelSpec, BuildOptions)> = config
        .sizes()
        .into_iter()
        .map(|n| (config.model_at(n), BuildOptions::default()))
        .collect();
    let report = scan(config, &specs)?;
    let output = scan_output(&prov, &report, "freq_scan.json", false);
    Ok(ScanRun { report, output })
}

/// Full-space Ising chain at one size and longitudinal field.
pub fn scaling_spec(base: &ModelSpec, n: usize, jx: f64) -> ModelSpec {
    ModelSpec {
        kind: if jx == 0.0 {
            ModelKind::IsingChain
        } else {
            ModelKind::IsingChainLongitudinal
        },
        n,
        jx,
        ..base.clone()
    }
}

pub fn cmd_scaling(config: &ExperimentConfig) -> Result<ScanRun, ExperimentError> {
    config.validate()?;
    config.validate_scaling()?;
    let prov = Provenance::new(Command::Scaling, config);
    let options = BuildOptions {
        full_space: true,
        ..BuildOptions::default()
    };
    let mut specs = Vec::new();
    for &jx in &config.sweep.jx {
        for n in config.sizes() {
            specs.push((scaling_spec(&config.model, n, jx), options));
        }
    }
    let report = scan(config, &specs)?;
    let output = scan_output(&prov, &report, "scaling_report.json", true);
    Ok(ScanRun { report, output })
}

// ---------------------------------------------------------------- fit

pub struct FitRun {
    pub report: FitReport,
    pub output: CommandOutput,
}

/// Reads decay tables (`#` lines are provenance comments). Rows without an
/// infidelity are skipped.
pub fn read_table(path: &Path) -> Result<Vec<CurveRow>, ExperimentError> {
    let bad = |message: String| ExperimentError::Table {
        path: path.display().to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column {name}")))
    };
    let (cn, ct, cf, ci) = (col("n")?, col("transition")?, col("n_f")?, col("infidelity")?);
    let cj = headers.iter().position(|h| h == "jx");
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let line = record.position().map_or(k + 2, |p| p.line() as usize);
        let field = |c: usize| record.get(c).unwrap_or("").trim();
        if field(ci).is_empty() {
            continue;
        }
        let parse_err = |what: &str| bad(format!("line {line}: cannot parse {what}"));
        let transition = field(ct).to_string();
        if Transition::parse(&transition).is_none() {
            return Err(bad(format!("line {line}: unknown transition {transition}")));
        }
        rows.push(CurveRow {
            jx: match cj {
                Some(c) => field(c).parse().map_err(|_| parse_err("jx"))?,
                None => 0.0,
            },
            transition,
            n: field(cn).parse().map_err(|_| parse_err("n"))?,
            n_f: field(cf).parse().map_err(|_| parse_err("n_f"))?,
            infidelity: field(ci).parse().map_err(|_| parse_err("infidelity"))?,
        });
    }
    Ok(rows)
}

pub fn cmd_fit(config: &ExperimentConfig, base_dir: &Path) -> Result<FitRun, ExperimentError> {
    config.validate()?;
    if config.fit.tables.is_empty() {
        return Err(ConfigError::Invalid {
            field: "fit.tables".into(),
            message: "must list at least one decay table".into(),
        }
        .into());
    }
    let prov = Provenance::new(Command::Fit, config);
    let mut rows = Vec::new();
    for t in &config.fit.tables {
        let path: PathBuf = if t.is_absolute() { t.clone() } else { base_dir.join(t) };
        rows.extend(read_table(&path)?);
    }
    let report = fit_report(&rows, config.control.eta, config.control.fit_floor);
    let output = CommandOutput {
        files: vec![
            prov.csv("fit.csv", &report.to_csv()),
            prov.json("fit_report.json", &report),
        ],
        converged: report.failed_fits() == 0,
    };
    Ok(FitRun { report, output })
}
