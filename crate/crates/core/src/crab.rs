//! Chopped-random-basis control: `Γ(t) = Γ₀(t)·f(t)` with
//! `f(t) = 1 + Σ_k [A_k sin(ν_k t) + B_k cos(ν_k t)] / λ(t)`,
//! `ν_k = 2πk(1 + r_k)/T` and `λ(t) = T²/[4t(T − t)]`.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{infidelity, DynamicsError, Method, Propagator, Pulse, StateVector};
use crate::models::HamiltonianPair;
use crate::search::{bfgs_with_gradient, minimize, LocalSearch, SearchOptions};
use crate::protocols::rng_for;

#[derive(Debug, Error, PartialEq)]
pub enum CrabError {
    #[error("guess spans T = {guess} but the basis expects T = {basis}")]
    DurationMismatch { guess: f64, basis: f64 },
    #[error("basis has {basis} harmonics but {coeffs} coefficient pairs were given")]
    LengthMismatch { basis: usize, coeffs: usize },
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Randomized harmonics for one basis draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrabBasis {
    pub total_time: f64,
    pub r: Vec<f64>,
    pub nu: Vec<f64>,
    pub seed: u64,
    pub draw: u64,
}

impl CrabBasis {
    /// Draws `r_k ~ U[0, 1)` in order, so the first `m` harmonics of a draw
    /// do not depend on `n_f` and bases for growing `n_f` are nested.
    pub fn draw(n_f: usize, total_time: f64, seed: u64, draw: u64) -> Self {
        let mut rng = rng_for(seed, BASIS_STREAM + draw);
        let r = (0..n_f).map(|_| rng.random::<f64>()).collect();
        Self::from_r(total_time, r, seed, draw)
    }

    pub fn from_r(total_time: f64, r: Vec<f64>, seed: u64, draw: u64) -> Self {
        let nu = frequencies(total_time, &r);
        Self {
            total_time,
            r,
            nu,
            seed,
            draw,
        }
    }

    pub fn n_f(&self) -> usize {
        self.r.len()
    }
}

fn frequencies(total_time: f64, r: &[f64]) -> Vec<f64> {
    r.iter()
        .enumerate()
        .map(|(i, rk)| 2.0 * PI * (i + 1) as f64 * (1.0 + rk) / total_time)
        .collect()
}

const BASIS_STREAM: u64 = 1 << 32;
const RESTART_STREAM: u64 = 2 << 32;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CrabCoefficients {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl CrabCoefficients {
    pub fn zeros(n_f: usize) -> Self {
        Self {
            a: vec![0.0; n_f],
            b: vec![0.0; n_f],
        }
    }

    pub fn n_f(&self) -> usize {
        self.a.len()
    }

    /// Layout `[A_1..A_n, B_1..B_n]`.
    pub fn from_flat(x: &[f64]) -> Self {
        let n = x.len() / 2;
        Self {
            a: x[..n].to_vec(),
            b: x[n..2 * n].to_vec(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.a.iter().chain(&self.b).copied().collect()
    }

    /// Zero-extends to `n_f` harmonics (truncates if shorter).
    pub fn padded(&self, n_f: usize) -> Self {
        let mut out = Self::zeros(n_f);
        for k in 0..n_f.min(self.n_f()) {
            out.a[k] = self.a[k];
            out.b[k] = self.b[k];
        }
        out
    }
}

/// `1/λ(t) = 4t(T − t)/T²`; zero at both endpoints, one at `T/2`.
pub fn inverse_lambda(t: f64, total_time: f64) -> f64 {
    4.0 * t * (total_time - t) / (total_time * total_time)
}

/// `f(t)`; exactly 1 at `t = 0` and `t = T`.
pub fn correction(basis: &CrabBasis, coeffs: &CrabCoefficients, t: f64) -> f64 {
    let mut sum = 0.0;
    for k in 0..basis.n_f() {
        let (s, c) = (basis.nu[k] * t).sin_cos();
        sum += coeffs.a[k] * s + coeffs.b[k] * c;
    }
    1.0 + inverse_lambda(t, basis.total_time) * sum
}

/// Guess pulse, basis and coefficients together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrabControl {
    pub guess: Pulse,
    pub basis: CrabBasis,
    pub coefficients: CrabCoefficients,
}

impl CrabControl {
    pub fn new(guess: Pulse, basis: CrabBasis, coefficients: CrabCoefficients) -> Result<Self, CrabError> {
        check(&guess, &basis, &coefficients)?;
        Ok(Self {
            guess,
            basis,
            coefficients,
        })
    }

    /// Continuous control `Γ₀(t)·f(t)`, with `Γ₀` read off the step containing
    /// `t` (the last step for `t = T`).
    pub fn field_at(&self, t: f64) -> f64 {
        let k = ((t / self.guess.dt).floor().max(0.0) as usize).min(self.guess.steps() - 1);
        self.guess.samples[k] * correction(&self.basis, &self.coefficients, t)
    }

    pub fn render(&self) -> Pulse {
        render_unchecked(&self.guess, &self.basis, &self.coefficients)
    }
}

fn check(guess: &Pulse, basis: &CrabBasis, coeffs: &CrabCoefficients) -> Result<(), CrabError> {
    guess.validate()?;
    let t = guess.duration();
    if (t - basis.total_time).abs() > 1e-9 * basis.total_time.abs().max(1.0) {
        return Err(CrabError::DurationMismatch {
            guess: t,
            basis: basis.total_time,
        });
    }
    if coeffs.a.len() != basis.n_f() || coeffs.b.len() != basis.n_f() {
        return Err(CrabError::LengthMismatch {
            basis: basis.n_f(),
            coeffs: coeffs.a.len().min(coeffs.b.len()),
        });
    }
    Ok(())
}

/// Samples `Γ₀(t_k)·f(t_k)` at the step midpoints of `guess`.
pub fn render_pulse(guess: &Pulse, basis: &CrabBasis, coeffs: &CrabCoefficients) -> Result<Pulse, CrabError> {
    check(guess, basis, coeffs)?;
    Ok(render_unchecked(guess, basis, coeffs))
}

fn render_unchecked(guess: &Pulse, basis: &CrabBasis, coeffs: &CrabCoefficients) -> Pulse {
    let samples = guess
        .samples
        .iter()
        .enumerate()
        .map(|(k, g)| g * correction(basis, coeffs, guess.midpoint(k)))
        .collect();
    Pulse {
        dt: guess.dt,
        samples,
        sign: guess.sign,
    }
}

/// `sin`/`cos` of every harmonic at every step midpoint, for one basis.
#[derive(Clone, Debug)]
struct HarmonicTable {
    nu: Vec<f64>,
    /// Per step: `n_f` pairs `(sin, cos)`.
    values: Vec<(f64, f64)>,
    inverse_lambda: Vec<f64>,
}

impl HarmonicTable {
    fn new(guess: &Pulse, basis: &CrabBasis) -> Self {
        let mut values = Vec::with_capacity(guess.steps() * basis.n_f());
        let mut inv = Vec::with_capacity(guess.steps());
        for k in 0..guess.steps() {
            let t = guess.midpoint(k);
            values.extend(basis.nu.iter().map(|nu| (nu * t).sin_cos()));
            inv.push(inverse_lambda(t, basis.total_time));
        }
        Self {
            nu: basis.nu.clone(),
            values,
            inverse_lambda: inv,
        }
    }

    /// Same arithmetic as [`correction`], so results match `render_pulse` bit for bit.
    fn render(&self, guess: &Pulse, coeffs: &CrabCoefficients) -> Pulse {
        let n_f = self.nu.len();
        let samples = guess
            .samples
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let mut sum = 0.0;
                for (j, (s, c)) in self.values[k * n_f..(k + 1) * n_f].iter().enumerate() {
                    sum += coeffs.a[j] * s + coeffs.b[j] * c;
                }
                g * (1.0 + self.inverse_lambda[k] * sum)
            })
            .collect();
        Pulse {
            dt: guess.dt,
            samples,
            sign: guess.sign,
        }
    }
}

/// A state-transfer task: steer `psi0` to `target` starting from `guess`.
#[derive(Clone, Debug)]
pub struct CrabProblem {
    pub propagator: Propagator,
    pub psi0: StateVector,
    pub target: StateVector,
    pub guess: Pulse,
    table: Option<HarmonicTable>,
}

impl CrabProblem {
    pub fn new(propagator: Propagator, psi0: StateVector, target: StateVector, guess: Pulse) -> Result<Self, CrabError> {
        guess.validate()?;
        psi0.check_dimension(propagator.dimension())?;
        target.check_dimension(propagator.dimension())?;
        Ok(Self {
            propagator,
            psi0,
            target,
            guess,
            table: None,
        })
    }

    /// As [`render_pulse`], reusing the harmonic table while the basis is unchanged.
    pub fn render(&mut self, basis: &CrabBasis, coeffs: &CrabCoefficients) -> Result<Pulse, CrabError> {
        check(&self.guess, basis, coeffs)?;
        if self.table.as_ref().is_none_or(|t| t.nu != basis.nu) {
            self.table = Some(HarmonicTable::new(&self.guess, basis));
        }
        Ok(self.table.as_ref().expect("table built").render(&self.guess, coeffs))
    }

    pub fn total_time(&self) -> f64 {
        self.guess.duration()
    }

    pub fn objective(&mut self, basis: &CrabBasis, coeffs: &CrabCoefficients) -> Result<f64, CrabError> {
        let pulse = self.render(basis, coeffs)?;
        let psi = self.propagator.propagate(&pulse, &self.psi0)?;
        Ok(infidelity(&psi, &self.target)?)
    }

    /// Infidelity and its gradient over the flat coefficients `[a..., b...]`,
    /// when the propagator integrates this control with the split method.
    pub fn objective_gradient(
        &mut self,
        basis: &CrabBasis,
        coeffs: &CrabCoefficients,
    ) -> Result<Option<(f64, Vec<f64>)>, CrabError> {
        let pulse = self.render(basis, coeffs)?;
        let Some((value, d_samples)) = self
            .propagator
            .infidelity_gradient(&pulse, &self.psi0, &self.target)?
        else {
            return Ok(None);
        };
        let table = self.table.as_ref().expect("table built by render");
        let n_f = basis.n_f();
        let mut grad = vec![0.0; 2 * n_f];
        for (k, (&dk, &g)) in d_samples.iter().zip(&self.guess.samples).enumerate() {
            let w = dk * g * table.inverse_lambda[k];
            if w == 0.0 {
                continue;
            }
            for (j, (sn, cs)) in table.values[k * n_f..(k + 1) * n_f].iter().enumerate() {
                grad[j] += w * sn;
                grad[n_f + j] += w * cs;
            }
        }
        Ok(Some((value, grad)))
    }

    /// Final state under the rendered control.
    pub fn final_state(&mut self, basis: &CrabBasis, coeffs: &CrabCoefficients) -> Result<StateVector, CrabError> {
        let pulse = self.render(basis, coeffs)?;
        Ok(self.propagator.propagate(&pulse, &self.psi0)?)
    }
}

/// Infidelity of the rendered control against `target`.
pub fn objective(
    pair: &HamiltonianPair,
    psi0: &StateVector,
    target: &StateVector,
    guess: &Pulse,
    basis: &CrabBasis,
    coeffs: &CrabCoefficients,
) -> Result<f64, CrabError> {
    CrabProblem::new(
        Propagator::new(pair, Method::Exact),
        psi0.clone(),
        target.clone(),
        guess.clone(),
    )?
    .objective(basis, coeffs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "d_max_evaluations")]
    pub max_evaluations: usize,
    #[serde(default = "d_simplex_scale")]
    pub simplex_scale: f64,
    #[serde(default = "d_tolerance")]
    pub tolerance: f64,
    #[serde(default = "d_one")]
    pub n_restarts: usize,
    #[serde(default = "d_one")]
    pub n_basis_draws: usize,
    #[serde(default)]
    pub optimize_frequencies: bool,
    #[serde(default)]
    pub local_search: LocalSearch,
    #[serde(default)]
    pub seed: u64,
    /// A run stops once it reaches this infidelity.
    #[serde(default = "d_stop_below")]
    pub stop_below: f64,
}

fn d_max_evaluations() -> usize {
    2000
}
fn d_simplex_scale() -> f64 {
    0.1
}
fn d_tolerance() -> f64 {
    1e-8
}
fn d_one() -> usize {
    1
}
fn d_stop_below() -> f64 {
    1e-12
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_evaluations: d_max_evaluations(),
            simplex_scale: d_simplex_scale(),
            tolerance: d_tolerance(),
            n_restarts: 1,
            n_basis_draws: 1,
            optimize_frequencies: false,
            local_search: LocalSearch::NelderMead,
            seed: 0,
            stop_below: d_stop_below(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), CrabError> {
        let bad = |m: &str| Err(CrabError::Config(m.into()));
        if self.max_evaluations == 0 {
            return bad("max_evaluations must be positive");
        }
        if !(self.simplex_scale.is_finite() && self.simplex_scale > 0.0) {
            return bad("simplex_scale must be positive");
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        if self.n_restarts == 0 || self.n_basis_draws == 0 {
            return bad("n_restarts and n_basis_draws must be positive");
        }
        if !(self.stop_below >= 0.0 && self.stop_below < 1.0) {
            return bad("stop_below must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Best point found within one basis draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawBest {
    pub basis: CrabBasis,
    pub coefficients: CrabCoefficients,
    pub infidelity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub draw: u64,
    pub restart: usize,
    pub infidelity: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub n_f: usize,
    pub best_infidelity: f64,
    pub basis: CrabBasis,
    pub coefficients: CrabCoefficients,
    pub evaluations: usize,
    /// Best-so-far after every evaluation, runs concatenated in (draw, restart) order.
    pub history: Vec<f64>,
    pub runs: Vec<RunSummary>,
    pub draws: Vec<DrawBest>,
    pub converged: bool,
    pub config: OptimizerConfig,
    /// Excluded from serialized output so reports stay reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl OptimizationReport {
    pub fn control(&self, guess: &Pulse) -> Result<CrabControl, CrabError> {
        CrabControl::new(guess.clone(), self.basis.clone(), self.coefficients.clone())
    }
}

struct RunOutcome {
    summary: RunSummary,
    best: DrawBest,
    history: Vec<f64>,
}

/// Multi-start Nelder–Mead from the origin.
pub fn optimize(problem: &CrabProblem, n_f: usize, config: &OptimizerConfig) -> Result<OptimizationReport, CrabError> {
    optimize_from(problem, n_f, config, &[])
}

/// As [`optimize`], but restart 0 of draw `d` starts from `warm[d]` (its
/// coefficients zero-padded to `n_f` and, with frequency optimization, its
/// `r_k` kept) when present.
pub fn optimize_from(
    problem: &CrabProblem,
    n_f: usize,
    config: &OptimizerConfig,
    warm: &[DrawBest],
) -> Result<OptimizationReport, CrabError> {
    config.validate()?;
    if n_f == 0 {
        return Err(CrabError::Config("n_f must be positive".into()));
    }
    let start = Instant::now();
    let t = problem.total_time();
    let bases: Vec<CrabBasis> = (0..config.n_basis_draws as u64)
        .map(|d| {
            let mut basis = CrabBasis::draw(n_f, t, config.seed, d);
            if config.optimize_frequencies {
                if let Some(w) = warm.get(d as usize) {
                    for (dst, src) in basis.r.iter_mut().zip(&w.basis.r) {
                        *dst = *src;
                    }
                    basis = CrabBasis::from_r(t, basis.r, basis.seed, d);
                }
            }
            basis
        })
        .collect();
    // Fail early on inconsistent inputs instead of inside the workers.
    render_pulse(&problem.guess, &bases[0], &CrabCoefficients::zeros(n_f))?;

    let units: Vec<(usize, usize)> = (0..config.n_basis_draws)
        .flat_map(|d| (0..config.n_restarts).map(move |r| (d, r)))
        .collect();
    let outcomes: Vec<RunOutcome> = units
        .par_iter()
        .map(|&(d, restart)| {
            let warm_start = warm.get(d).map(|w| w.coefficients.padded(n_f));
            run_one(problem.clone(), &bases[d], restart, config, warm_start)
        })
        .collect();

    let mut history = Vec::new();
    let mut best_so_far = f64::INFINITY;
    let mut runs = Vec::with_capacity(outcomes.len());
    let mut draws: Vec<DrawBest> = Vec::with_capacity(config.n_basis_draws);
    for o in outcomes {
        for &v in &o.history {
            best_so_far = best_so_far.min(v);
            history.push(best_so_far);
        }
        let d = o.summary.draw as usize;
        if draws.len() <= d {
            draws.push(o.best);
        } else if o.best.infidelity < draws[d].infidelity {
            draws[d] = o.best;
        }
        runs.push(o.summary);
    }
    let best = draws
        .iter()
        .min_by(|a, b| a.infidelity.total_cmp(&b.infidelity))
        .expect("at least one draw")
        .clone();
    Ok(OptimizationReport {
        n_f,
        best_infidelity: best.infidelity,
        basis: best.basis,
        coefficients: best.coefficients,
        evaluations: history.len(),
        converged: runs.iter().any(|r| r.converged),
        history,
        runs,
        draws,
        config: config.clone(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn run_one(
    problem: CrabProblem,
    basis: &CrabBasis,
    restart: usize,
    config: &OptimizerConfig,
    warm: Option<CrabCoefficients>,
) -> RunOutcome {
    let n_f = basis.n_f();
    let origin = warm.unwrap_or_else(|| CrabCoefficients::zeros(n_f)).to_flat();
    let mut x0 = origin;
    if config.optimize_frequencies {
        x0.extend_from_slice(&basis.r);
    }
    if restart > 0 {
        let stream = RESTART_STREAM + ((basis.draw << 16) | restart as u64);
        let mut rng = rng_for(config.seed, stream);
        for (i, x) in x0.iter_mut().enumerate() {
            // Frequencies keep their draw; only coefficients are scattered.
            if i < 2 * n_f {
                *x += config.simplex_scale * rng.random_range(-1.0..=1.0);
            }
        }
    }
    let t = basis.total_time;
    let split = |x: &[f64]| -> (CrabBasis, CrabCoefficients) {
        let coeffs = CrabCoefficients::from_flat(&x[..2 * n_f]);
        let b = if config.optimize_frequencies {
            let r = x[2 * n_f..].iter().map(|v| v.clamp(0.0, 1.0)).collect();
            CrabBasis::from_r(t, r, basis.seed, basis.draw)
        } else {
            basis.clone()
        };
        (b, coeffs)
    };
    let opts = SearchOptions {
        max_evaluations: config.max_evaluations,
        initial_scale: config.simplex_scale,
        tolerance: config.tolerance,
        target: config.stop_below,
        ..Default::default()
    };
    let problem = RefCell::new(problem);
    let value = |x: &[f64]| {
        let (b, c) = split(x);
        problem.borrow_mut().objective(&b, &c).unwrap_or(f64::INFINITY)
    };
    let result = match config.local_search {
        // Frequencies are clamped, so their derivatives are left to differences.
        LocalSearch::Bfgs if !config.optimize_frequencies => bfgs_with_gradient(
            value,
            |x: &[f64]| {
                let (b, c) = split(x);
                problem.borrow_mut().objective_gradient(&b, &c).ok().flatten()
            },
            &x0,
            &opts,
        ),
        method => minimize(method, value, &x0, &opts),
    };
    let (best_basis, coefficients) = split(&result.x);
    RunOutcome {
        summary: RunSummary {
            draw: basis.draw,
            restart,
            infidelity: result.f,
            evaluations: result.evaluations,
            converged: result.converged,
        },
        best: DrawBest {
            basis: best_basis,
            coefficients,
            infidelity: result.f,
        },
        history: result.history,
    }
}
