//! Time evolution under piecewise-constant pulses, diagonal entropy and infidelity.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{diagonalize, BasisLabel, HamiltonianPair, Model, ModelKind, Spectrum};

/// Populations below this contribute nothing to the diagonal entropy.
pub const POPULATION_FLOOR: f64 = 1e-15;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("pulse sample {index} is not finite ({value})")]
    NonFiniteSample { index: usize, value: f64 },
    #[error("invalid pulse: {0}")]
    InvalidPulse(String),
    #[error("state has zero norm")]
    ZeroNorm,
}

/// Normalized amplitudes in a sector basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector(Vec<Complex64>);

impl StateVector {
    pub fn basis(dimension: usize, index: usize) -> Self {
        let mut amps = vec![Complex64::new(0.0, 0.0); dimension];
        amps[index] = Complex64::new(1.0, 0.0);
        Self(amps)
    }

    pub fn from_real(values: impl IntoIterator<Item = f64>) -> Self {
        Self(values.into_iter().map(|x| Complex64::new(x, 0.0)).collect())
    }

    /// Normalizes the given amplitudes.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self, DynamicsError> {
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(DynamicsError::ZeroNorm);
        }
        Ok(Self(amps.into_iter().map(|a| a / norm).collect()))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn scaled(&self, phase: Complex64) -> Self {
        Self(self.0.iter().map(|a| a * phase).collect())
    }

    /// Global phase fixed so the largest-magnitude amplitude is real and positive.
    pub fn with_canonical_phase(self) -> Self {
        let mut best = 0;
        for (i, a) in self.0.iter().enumerate() {
            if a.norm_sqr() > self.0[best].norm_sqr() * (1.0 + 1e-12) {
                best = i;
            }
        }
        let pivot = self.0[best];
        if pivot.norm() == 0.0 {
            return self;
        }
        let phase = pivot.conj() / pivot.norm();
        self.scaled(phase)
    }

    pub fn check_dimension(&self, expected: usize) -> Result<(), DynamicsError> {
        if self.dimension() != expected {
            return Err(DynamicsError::DimensionMismatch {
                expected,
                found: self.dimension(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Sign {
    #[default]
    Forward,
    /// Evolve under `−H(Γ)`.
    Backward,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Forward => 1.0,
            Sign::Backward => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Sign::Forward => Sign::Backward,
            Sign::Backward => Sign::Forward,
        }
    }
}

impl From<Sign> for i8 {
    fn from(s: Sign) -> i8 {
        s.value() as i8
    }
}

impl TryFrom<i8> for Sign {
    type Error = String;
    fn try_from(v: i8) -> Result<Self, String> {
        match v {
            1 => Ok(Sign::Forward),
            -1 => Ok(Sign::Backward),
            other => Err(format!("sign must be +1 or -1, got {other}")),
        }
    }
}

/// Piecewise-constant control field on a uniform grid: step `k` covers
/// `[k·dt, (k+1)·dt)` at field `samples[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub dt: f64,
    pub samples: Vec<f64>,
    #[serde(default)]
    pub sign: Sign,
}

impl Pulse {
    pub fn new(dt: f64, samples: Vec<f64>) -> Result<Self, DynamicsError> {
        let pulse = Self {
            dt,
            samples,
            sign: Sign::Forward,
        };
        pulse.validate()?;
        Ok(pulse)
    }

    pub fn constant(dt: f64, steps: usize, gamma: f64) -> Self {
        Self {
            dt,
            samples: vec![gamma; steps],
            sign: Sign::Forward,
        }
    }

    /// Samples a continuous field at step midpoints over `[0, total_time]`.
    pub fn from_fn(total_time: f64, dt: f64, field: impl Fn(f64) -> f64) -> Self {
        let steps = steps_for(total_time, dt);
        let dt = total_time / steps as f64;
        Self {
            dt,
            samples: (0..steps).map(|k| field((k as f64 + 0.5) * dt)).collect(),
            sign: Sign::Forward,
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(DynamicsError::InvalidPulse(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.samples.is_empty() {
            return Err(DynamicsError::InvalidPulse("pulse has no samples".into()));
        }
        if let Some((index, &value)) = self
            .samples
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
        {
            return Err(DynamicsError::NonFiniteSample { index, value });
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.samples.len()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.samples.len() as f64
    }

    pub fn midpoint(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dt
    }

    /// Appends `other` (same `dt` and sign assumed).
    pub fn concat(mut self, other: &Pulse) -> Self {
        self.samples.extend_from_slice(&other.samples);
        self
    }

    /// CSV with columns `t, gamma, sign`; `t` is the start of each step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,gamma,sign\n");
        let sign = i8::from(self.sign);
        for (k, g) in self.samples.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", k as f64 * self.dt, g, sign);
        }
        out
    }
}

/// Number of whole steps of size close to `dt` covering `total_time`.
pub fn steps_for(total_time: f64, dt: f64) -> usize {
    ((total_time / dt).round() as usize).max(1)
}

/// Default step: `min(0.01, T/2000)`.
pub fn default_dt(total_time: f64) -> f64 {
    (total_time / 2000.0).min(0.01)
}

/// `1 − |⟨φ|ψ⟩|²`, clamped to `[0, 1]`. Norms are divided out so round-off
/// drift in long propagations does not leak into the result.
pub fn infidelity(psi: &StateVector, phi: &StateVector) -> Result<f64, DynamicsError> {
    psi.check_dimension(phi.dimension())?;
    let overlap = psi.inner(phi).norm_sqr() / (psi.norm() * phi.norm()).powi(2);
    Ok((1.0 - overlap).clamp(0.0, 1.0))
}

/// Populations of `psi` in the eigenbasis of `spectrum`.
pub fn populations(psi: &StateVector, spectrum: &Spectrum) -> Vec<f64> {
    project(spectrum, psi.amplitudes())
        .into_iter()
        .map(|c| c.norm_sqr())
        .collect()
}

/// Shannon entropy (nats) of `psi`'s populations in the eigenbasis of `spectrum`.
pub fn diagonal_entropy_in(psi: &StateVector, spectrum: &Spectrum) -> f64 {
    shannon(&populations(psi, spectrum))
}

pub fn diagonal_entropy(psi: &StateVector, pair: &HamiltonianPair, gamma: f64) -> f64 {
    diagonal_entropy_in(psi, &diagonalize(pair, gamma))
}

pub fn shannon(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&x| x >= POPULATION_FLOOR)
        .map(|&x| -x * x.ln())
        .sum::<f64>()
        .max(0.0)
}

/// `Vᵀψ` for a real eigenvector matrix stored column-major.
fn project(spectrum: &Spectrum, psi: &[Complex64]) -> Vec<Complex64> {
    let d = spectrum.dimension();
    let v = spectrum.vectors.as_slice();
    (0..d)
        .map(|k| {
            let col = &v[k * d..(k + 1) * d];
            let (mut re, mut im) = (0.0, 0.0);
            for (x, a) in col.iter().zip(psi) {
                re += x * a.re;
                im += x * a.im;
            }
            Complex64::new(re, im)
        })
        .collect()
}

/// `ψ ← V · (phases ⊙ Vᵀψ)`.
fn apply_in_eigenbasis(spectrum: &Spectrum, psi: &mut [Complex64], phases: impl Fn(usize) -> Complex64) {
    let d = spectrum.dimension();
    let coeffs = project(spectrum, psi);
    let v = spectrum.vectors.as_slice();
    psi.iter_mut().for_each(|a| *a = Complex64::new(0.0, 0.0));
    for (k, c) in coeffs.iter().enumerate() {
        let c = c * phases(k);
        let col = &v[k * d..(k + 1) * d];
        for (a, x) in psi.iter_mut().zip(col) {
            a.re += x * c.re;
            a.im += x * c.im;
        }
    }
}

/// How each step's exponential `exp(−i·s·H(Γ)·dt)` is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Eigendecomposition of `H(Γ)` per distinct field value, reused across
    /// runs of equal samples.
    Exact,
    /// Symmetric fourth-order splitting of `h_drive` (diagonal) and `h_fixed`
    /// (diagonal in a cached basis). Unitary and exactly time-reversible.
    Split,
    /// Cheaper of the two for the pulse at hand.
    #[default]
    Auto,
}

/// Coefficients of the symmetric triple-jump composition of Strang steps.
const TRIPLE_JUMP: [f64; 3] = {
    // w1 = 1 / (2 - 2^(1/3)), w0 = 1 - 2 w1
    let w1 = 1.351_207_191_959_657_7;
    [w1, 1.0 - 2.0 * w1, w1]
};

/// Basis in which `h_fixed` is diagonal.
#[derive(Debug)]
enum FixedBasis {
    /// `σˣ` product basis of an Ising chain: reached from the `σᶻ` basis by a
    /// Walsh–Hadamard transform on the full `2^N` space.
    Hadamard {
        sites: usize,
        /// Sector index → full-space index.
        embed: Vec<usize>,
    },
    /// Dense eigenbasis of `h_fixed`.
    Dense(Spectrum),
}

#[derive(Debug)]
struct SplitKernel {
    fixed: FixedBasis,
    /// `h_fixed` eigenvalues in the working space ordering.
    fixed_energies: Vec<f64>,
    /// Distinct `h_drive` values (ascending) and, per working-space entry,
    /// which one applies.
    drive_levels: Vec<f64>,
    drive_index: Vec<u32>,
    /// Set when the levels are evenly spaced, so phase tables follow from
    /// one rotation.
    drive_spacing: Option<f64>,
}

/// One `exp(−i·τ·h_fixed)` factor, prepared for a fixed `τ`.
enum FixedStep {
    /// Diagonal phases in the working basis (Hadamard kernels fold in the
    /// `1/2^N` normalization).
    Phases(Vec<Complex64>),
    /// Full unitary, row-major; used for small dense kernels.
    Matrix(Vec<Complex64>),
}

/// Dense kernels up to this dimension get their fixed factors as explicit matrices.
const MATRIX_STEP_LIMIT: usize = 256;

/// Sorts levels and remaps indices, detecting an arithmetic progression.
fn drive_table(values: impl Iterator<Item = f64>) -> (Vec<f64>, Vec<u32>, Option<f64>) {
    let values: Vec<f64> = values.collect();
    let mut levels = values.clone();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let index = values
        .iter()
        .map(|v| levels.partition_point(|l| l < v) as u32)
        .collect();
    let spacing = if levels.len() > 1 {
        let sp = levels[1] - levels[0];
        let scale = levels.iter().fold(0.0f64, |m, l| m.max(l.abs()));
        levels
            .iter()
            .enumerate()
            .all(|(j, l)| (l - (levels[0] + j as f64 * sp)).abs() <= 1e-12 * scale)
            .then_some(sp)
    } else {
        None
    };
    (levels, index, spacing)
}

impl SplitKernel {
    /// Walsh–Hadamard kernel for an Ising chain.
    fn hadamard(model: &Model) -> Option<Self> {
        let spec = &model.spec;
        if spec.kind == ModelKind::Lmg {
            return None;
        }
        let sites = spec.n;
        let full = 1usize << sites;
        let embed = model
            .basis
            .labels
            .iter()
            .map(|l| match l {
                BasisLabel::Bits(b) => Some(*b as usize),
                BasisLabel::Dicke { .. } => None,
            })
            .collect::<Option<Vec<_>>>()?;
        let bonds = spec.bonds();
        let fixed_energies = (0..full)
            .map(|x| {
                let s = |i: usize| if x >> i & 1 == 1 { -1.0 } else { 1.0 };
                let coupling: f64 = bonds.iter().map(|&(a, b)| s(a) * s(b)).sum();
                let field: f64 = (0..sites).map(s).sum();
                -spec.j * coupling - spec.jx * field
            })
            .collect();
        let (drive_levels, drive_index, drive_spacing) =
            drive_table((0..full as u64).map(|x| -(sites as f64 - 2.0 * x.count_ones() as f64)));
        Some(Self {
            fixed: FixedBasis::Hadamard { sites, embed },
            fixed_energies,
            drive_levels,
            drive_index,
            drive_spacing,
        })
    }

    /// Kernel using the dense eigenbasis of `h_fixed`; needs a diagonal `h_drive`.
    fn dense(pair: &HamiltonianPair) -> Option<Self> {
        let drive = pair.drive_diagonal()?;
        let spectrum = Spectrum::of(pair.h_fixed.clone());
        let (drive_levels, drive_index, drive_spacing) = drive_table(drive.into_iter());
        Some(Self {
            fixed_energies: spectrum.values.clone(),
            fixed: FixedBasis::Dense(spectrum),
            drive_levels,
            drive_index,
            drive_spacing,
        })
    }

    fn working_dimension(&self) -> usize {
        self.drive_index.len()
    }

    fn embed(&self, psi: &[Complex64]) -> Vec<Complex64> {
        match &self.fixed {
            FixedBasis::Hadamard { embed, .. } => {
                let mut full = vec![Complex64::new(0.0, 0.0); self.working_dimension()];
                for (a, &i) in psi.iter().zip(embed) {
                    full[i] = *a;
                }
                full
            }
            FixedBasis::Dense(_) => psi.to_vec(),
        }
    }

    fn extract(&self, work: &[Complex64], out: &mut [Complex64]) {
        match &self.fixed {
            FixedBasis::Hadamard { embed, .. } => {
                for (a, &i) in out.iter_mut().zip(embed) {
                    *a = work[i];
                }
            }
            FixedBasis::Dense(_) => out.copy_from_slice(work),
        }
    }

    fn apply_drive(&self, work: &mut [Complex64], angle: f64, table: &mut Vec<Complex64>) {
        if angle == 0.0 {
            return;
        }
        table.clear();
        match self.drive_spacing {
            Some(sp) => {
                let rot = Complex64::from_polar(1.0, -angle * sp);
                let mut z = Complex64::from_polar(1.0, -angle * self.drive_levels[0]);
                for _ in 0..self.drive_levels.len() {
                    table.push(z);
                    z *= rot;
                }
            }
            None => table.extend(
                self.drive_levels
                    .iter()
                    .map(|&h| Complex64::from_polar(1.0, -angle * h)),
            ),
        }
        for (a, &i) in work.iter_mut().zip(&self.drive_index) {
            *a *= table[i as usize];
        }
    }

    fn apply_fixed(&self, work: &mut [Complex64], step: &FixedStep, scratch: &mut Vec<Complex64>) {
        match (&self.fixed, step) {
            (FixedBasis::Hadamard { .. }, FixedStep::Phases(phases)) => {
                walsh_hadamard(work);
                for (a, p) in work.iter_mut().zip(phases) {
                    *a *= p;
                }
                walsh_hadamard(work);
            }
            (FixedBasis::Dense(spectrum), FixedStep::Phases(phases)) => {
                apply_in_eigenbasis(spectrum, work, |k| phases[k])
            }
            (_, FixedStep::Matrix(u)) => {
                let d = work.len();
                scratch.clear();
                scratch.extend_from_slice(work);
                for (row, a) in u.chunks_exact(d).zip(work.iter_mut()) {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (m, x) in row.iter().zip(scratch.iter()) {
                        re += m.re * x.re - m.im * x.im;
                        im += m.re * x.im + m.im * x.re;
                    }
                    *a = Complex64::new(re, im);
                }
            }
        }
    }

    fn fixed_step(&self, angle: f64) -> FixedStep {
        let phases = self
            .fixed_energies
            .iter()
            .map(|&e| Complex64::from_polar(1.0, -angle * e));
        match &self.fixed {
            FixedBasis::Hadamard { sites, .. } => {
                let scale = 1.0 / (1usize << sites) as f64;
                FixedStep::Phases(phases.map(|p| p * scale).collect())
            }
            FixedBasis::Dense(spectrum) if spectrum.dimension() <= MATRIX_STEP_LIMIT => {
                let d = spectrum.dimension();
                let phases: Vec<Complex64> = phases.collect();
                let v = &spectrum.vectors;
                let mut u = vec![Complex64::new(0.0, 0.0); d * d];
                for i in 0..d {
                    for j in 0..d {
                        u[i * d + j] = (0..d).map(|k| phases[k] * (v[(i, k)] * v[(j, k)])).sum();
                    }
                }
                FixedStep::Matrix(u)
            }
            FixedBasis::Dense(_) => FixedStep::Phases(phases.collect()),
        }
    }

    /// Relative cost of one fourth-order step, in units of a real multiply-add.
    fn step_cost(&self) -> f64 {
        let d = self.working_dimension() as f64;
        let transform = match &self.fixed {
            FixedBasis::Hadamard { sites, .. } => 4.0 * *sites as f64 * d,
            FixedBasis::Dense(_) if self.working_dimension() <= MATRIX_STEP_LIMIT => 2.0 * d * d,
            FixedBasis::Dense(_) => 4.0 * d * d,
        };
        3.0 * (transform + 8.0 * d)
    }
}

/// Unnormalized in-place Walsh–Hadamard transform.
fn walsh_hadamard(v: &mut [Complex64]) {
    let n = v.len();
    let mut h = 1;
    while h < n {
        for start in (0..n).step_by(2 * h) {
            let (lo, hi) = v[start..start + 2 * h].split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

/// Size of the per-propagator eigendecomposition cache before it is flushed.
const CACHE_CAPACITY: usize = 64;

/// Applies pulses to states for one Hamiltonian pair. Cheap to clone; clones
/// share the split kernel and start from a copy of the spectrum cache.
#[derive(Debug)]
pub struct Propagator {
    pair: Arc<HamiltonianPair>,
    split: Option<Arc<SplitKernel>>,
    method: Method,
    cache: HashMap<i64, Arc<Spectrum>>,
}

impl Clone for Propagator {
    fn clone(&self) -> Self {
        Self {
            pair: Arc::clone(&self.pair),
            split: self.split.clone(),
            method: self.method,
            cache: self.cache.clone(),
        }
    }
}

impl Propagator {
    /// Propagator over a bare pair; the split method uses the dense eigenbasis of `h_fixed`.
    pub fn new(pair: &HamiltonianPair, method: Method) -> Self {
        let split = if method == Method::Exact {
            None
        } else {
            SplitKernel::dense(pair).map(Arc::new)
        };
        Self::assemble(pair, split, method)
    }

    /// Propagator that uses the fast Walsh–Hadamard split for Ising chains.
    pub fn for_model(model: &Model, method: Method) -> Self {
        let split = if method == Method::Exact {
            None
        } else {
            SplitKernel::hadamard(model)
                .or_else(|| SplitKernel::dense(&model.pair))
                .map(Arc::new)
        };
        Self::assemble(&model.pair, split, method)
    }

    fn assemble(pair: &HamiltonianPair, split: Option<Arc<SplitKernel>>, method: Method) -> Self {
        let method = if split.is_none() { Method::Exact } else { method };
        Self {
            pair: Arc::new(pair.clone()),
            split,
            method,
            cache: HashMap::new(),
        }
    }

    pub fn pair(&self) -> &HamiltonianPair {
        &self.pair
    }

    pub fn dimension(&self) -> usize {
        self.pair.dimension()
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// Eigendecomposition of `H(Γ)`, cached on a `1e-12` grid in `Γ`.
    pub fn spectrum(&mut self, gamma: f64) -> Arc<Spectrum> {
        let key = (gamma * 1e12).round();
        if key.abs() >= 9.0e18 {
            return Arc::new(diagonalize(&self.pair, gamma));
        }
        let key = key as i64;
        if let Some(s) = self.cache.get(&key) {
            return Arc::clone(s);
        }
        if self.cache.len() >= CACHE_CAPACITY {
            self.cache.clear();
        }
        let s = Arc::new(diagonalize(&self.pair, gamma));
        self.cache.insert(key, Arc::clone(&s));
        s
    }

    /// Method that will actually be used for `pulse`.
    pub fn resolve(&self, pulse: &Pulse) -> Method {
        match (self.method, &self.split) {
            (Method::Exact, _) | (_, None) => Method::Exact,
            (Method::Split, Some(_)) => Method::Split,
            (Method::Auto, Some(kernel)) => {
                let d = self.dimension() as f64;
                let runs = count_runs(&pulse.samples) as f64;
                let mut distinct: Vec<i64> = pulse
                    .samples
                    .iter()
                    .map(|g| (g * 1e12).round() as i64)
                    .collect();
                distinct.sort_unstable();
                distinct.dedup();
                distinct.retain(|k| !self.cache.contains_key(k));
                // Cached spectra cost nothing to reuse.
                let exact = distinct.len() as f64 * 6.0 * d * d * d + runs * 4.0 * d * d;
                let split = pulse.steps() as f64 * kernel.step_cost();
                if exact <= split {
                    Method::Exact
                } else {
                    Method::Split
                }
            }
        }
    }

    pub fn propagate(&mut self, pulse: &Pulse, psi0: &StateVector) -> Result<StateVector, DynamicsError> {
        let mut psi = psi0.clone();
        self.evolve(pulse, &mut psi, |_, _| {})?;
        Ok(psi)
    }

    /// Evolves `psi` in place through `pulse`, calling `observe(step_done, psi)`
    /// after every `stride` steps and after the final one.
    pub fn evolve_sampled(
        &mut self,
        pulse: &Pulse,
        psi: &mut StateVector,
        stride: usize,
        mut observe: impl FnMut(usize, &StateVector),
    ) -> Result<(), DynamicsError> {
        let stride = stride.max(1);
        self.evolve_chunked(pulse, psi, stride, &mut observe)
    }

    fn evolve(
        &mut self,
        pulse: &Pulse,
        psi: &mut StateVector,
        mut observe: impl FnMut(usize, &StateVector),
    ) -> Result<(), DynamicsError> {
        self.evolve_chunked(pulse, psi, usize::MAX, &mut observe)
    }

    fn evolve_chunked(
        &mut self,
        pulse: &Pulse,
        psi: &mut StateVector,
        stride: usize,
        observe: &mut dyn FnMut(usize, &StateVector),
    ) -> Result<(), DynamicsError> {
        pulse.validate()?;
        psi.check_dimension(self.dimension())?;
        let steps = pulse.steps();
        match self.resolve(pulse) {
            Method::Split => {
                let kernel = Arc::clone(self.split.as_ref().expect("split kernel present"));
                let mut work = kernel.embed(psi.amplitudes());
                let angle = pulse.sign.value() * pulse.dt;
                // The outer jumps share a weight.
                let outer = kernel.fixed_step(TRIPLE_JUMP[0] * angle);
                let inner = kernel.fixed_step(TRIPLE_JUMP[1] * angle);
                let factors = [&outer, &inner, &outer];
                let mut table = Vec::new();
                let mut scratch = Vec::new();
                let mut start = 0;
                while start < steps {
                    let end = start.saturating_add(stride).min(steps);
                    let mut pending = 0.0;
                    for &g in &pulse.samples[start..end] {
                        for (w, fixed) in TRIPLE_JUMP.iter().zip(factors) {
                            let half = 0.5 * w * angle * g;
                            kernel.apply_drive(&mut work, pending + half, &mut table);
                            kernel.apply_fixed(&mut work, fixed, &mut scratch);
                            pending = half;
                        }
                    }
                    kernel.apply_drive(&mut work, pending, &mut table);
                    kernel.extract(&work, &mut psi.0);
                    observe(end, psi);
                    start = end;
                }
            }
            _ => {
                let sign = pulse.sign.value();
                let mut start = 0;
                while start < steps {
                    let end = start.saturating_add(stride).min(steps);
                    let mut k = start;
                    while k < end {
                        let g = pulse.samples[k];
                        let mut run = 1;
                        while k + run < end && pulse.samples[k + run] == g {
                            run += 1;
                        }
                        let spectrum = self.spectrum(g);
                        let tau = sign * pulse.dt * run as f64;
                        apply_in_eigenbasis(&spectrum, &mut psi.0, |n| {
                            Complex64::from_polar(1.0, -tau * spectrum.values[n])
                        });
                        k += run;
                    }
                    observe(end, psi);
                    start = end;
                }
            }
        }
        Ok(())
    }
}

impl Propagator {
    /// Infidelity of the evolved state against `target` and its derivative
    /// with respect to every pulse sample, by one forward and one backward
    /// sweep of the split integrator. `None` when `pulse` would not be
    /// propagated with the split method, so callers can fall back to
    /// finite differences and stay consistent with [`Propagator::propagate`].
    pub fn infidelity_gradient(
        &self,
        pulse: &Pulse,
        psi0: &StateVector,
        target: &StateVector,
    ) -> Result<Option<(f64, Vec<f64>)>, DynamicsError> {
        pulse.validate()?;
        psi0.check_dimension(self.dimension())?;
        target.check_dimension(self.dimension())?;
        if self.resolve(pulse) != Method::Split {
            return Ok(None);
        }
        let kernel = Arc::clone(self.split.as_ref().expect("split kernel present"));
        let angle = pulse.sign.value() * pulse.dt;
        let forward = [
            kernel.fixed_step(TRIPLE_JUMP[0] * angle),
            kernel.fixed_step(TRIPLE_JUMP[1] * angle),
        ];
        let backward = [
            kernel.fixed_step(-TRIPLE_JUMP[0] * angle),
            kernel.fixed_step(-TRIPLE_JUMP[1] * angle),
        ];
        // Jump i uses factor FACTOR[i] of the pair above.
        const FACTOR: [usize; 3] = [0, 1, 0];
        let half = |w: f64, g: f64| 0.5 * w * angle * g;
        let mut table = Vec::new();
        let mut scratch = Vec::new();

        // Forward sweep, as in `evolve`.
        let mut psi = kernel.embed(psi0.amplitudes());
        let mut pending = 0.0;
        for &g in &pulse.samples {
            for (i, &w) in TRIPLE_JUMP.iter().enumerate() {
                kernel.apply_drive(&mut psi, pending + half(w, g), &mut table);
                kernel.apply_fixed(&mut psi, &forward[FACTOR[i]], &mut scratch);
                pending = half(w, g);
            }
        }
        kernel.apply_drive(&mut psi, pending, &mut table);

        let mut out = psi0.clone();
        kernel.extract(&psi, &mut out.0);
        let value = infidelity(&out, target)?;
        let mut chi = kernel.embed(target.amplitudes());
        let overlap: Complex64 = chi.iter().zip(&psi).map(|(c, p)| c.conj() * p).sum();
        let norm = (out.norm() * target.norm()).powi(2);

        // dI/dθ for a drive factor exp(−iθ·h_drive) sitting between the
        // current `chi` (pulled back from the target) and `psi`.
        let levels = &kernel.drive_levels;
        let index = &kernel.drive_index;
        let dtheta = |chi: &[Complex64], psi: &[Complex64]| -> f64 {
            let mut acc = Complex64::new(0.0, 0.0);
            for ((c, p), &j) in chi.iter().zip(psi).zip(index) {
                acc += c.conj() * p * levels[j as usize];
            }
            // d⟨χ|ψ⟩/dθ = −i·acc
            let d_overlap = Complex64::new(acc.im, -acc.re);
            -2.0 * (overlap.conj() * d_overlap).re / norm
        };

        // Backward sweep: undo each factor on both vectors, collecting
        // derivatives at the drive factors.
        let steps = pulse.steps();
        let mut grad = vec![0.0; steps];
        let last = pulse.samples[steps - 1];
        let d = dtheta(&chi, &psi);
        grad[steps - 1] += d * half(TRIPLE_JUMP[2], 1.0);
        let mut theta = half(TRIPLE_JUMP[2], last);
        for k in (0..steps).rev() {
            let g = pulse.samples[k];
            for i in (0..3).rev() {
                kernel.apply_drive(&mut psi, -theta, &mut table);
                kernel.apply_drive(&mut chi, -theta, &mut table);
                kernel.apply_fixed(&mut psi, &backward[FACTOR[i]], &mut scratch);
                kernel.apply_fixed(&mut chi, &backward[FACTOR[i]], &mut scratch);
                // The drive factor before jump i of step k.
                let d = dtheta(&chi, &psi);
                let w = TRIPLE_JUMP[i];
                if i > 0 {
                    let wp = TRIPLE_JUMP[i - 1];
                    grad[k] += d * half(w + wp, 1.0);
                    theta = half(w + wp, g);
                } else {
                    grad[k] += d * half(w, 1.0);
                    match k.checked_sub(1) {
                        Some(prev) => {
                            grad[prev] += d * half(TRIPLE_JUMP[2], 1.0);
                            theta = half(w, g) + half(TRIPLE_JUMP[2], pulse.samples[prev]);
                        }
                        None => theta = half(w, g),
                    }
                }
            }
        }
        Ok(Some((value, grad)))
    }
}

fn count_runs(samples: &[f64]) -> usize {
    1 + samples.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Exact propagation through `pulse` via per-step eigendecompositions.
pub fn propagate(pair: &HamiltonianPair, pulse: &Pulse, psi0: &StateVector) -> Result<StateVector, DynamicsError> {
    Propagator::new(pair, Method::Exact).propagate(pulse, psi0)
}

/// Sampled observables along one trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub entropy: Vec<f64>,
    pub infidelity: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Shifts all times by `offset` and appends to `self`.
    pub fn extend_shifted(&mut self, other: &TrajectoryRecord, offset: f64) {
        self.times.extend(other.times.iter().map(|t| t + offset));
        self.entropy.extend_from_slice(&other.entropy);
        self.infidelity.extend_from_slice(&other.infidelity);
    }

    /// CSV with columns `time, s_d, infidelity`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,s_d,infidelity\n");
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{},{}",
                self.times[i], self.entropy[i], self.infidelity[i]
            );
        }
        out
    }
}

/// Evolves `psi0` through `pulse`, recording the diagonal entropy in the
/// eigenbasis of the instantaneous field and the infidelity against
/// `reference` at `t = 0` and every `stride` steps.
pub fn record_trajectory(
    propagator: &mut Propagator,
    pulse: &Pulse,
    psi0: &StateVector,
    reference: &StateVector,
    stride: usize,
) -> Result<(TrajectoryRecord, StateVector), DynamicsError> {
    pulse.validate()?;
    psi0.check_dimension(propagator.dimension())?;
    reference.check_dimension(propagator.dimension())?;
    let mut record = TrajectoryRecord::default();
    let first = propagator.spectrum(pulse.samples[0]);
    record.times.push(0.0);
    record.entropy.push(diagonal_entropy_in(psi0, &first));
    record.infidelity.push(infidelity(psi0, reference)?);

    let mut samples = Vec::new();
    let mut psi = psi0.clone();
    propagator.evolve_sampled(pulse, &mut psi, stride, |step, state| {
        samples.push((step, state.clone()));
    })?;
    for (step, state) in samples {
        let spectrum = propagator.spectrum(pulse.samples[step - 1]);
        record.times.push(step as f64 * pulse.dt);
        record.entropy.push(diagonal_entropy_in(&state, &spectrum));
        record.infidelity.push(infidelity(&state, reference)?);
    }
    Ok((record, psi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ground_state, ModelSpec};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn infidelity_basic_cases() {
        let a = StateVector::from_amplitudes(vec![c(1.0, 0.0), c(0.0, 1.0)]).unwrap();
        let b = StateVector::from_amplitudes(vec![c(1.0, 0.0), c(0.0, -1.0)]).unwrap();
        assert!(infidelity(&a, &a).unwrap() < 1e-15);
        let rotated = a.scaled(Complex64::from_polar(1.0, 0.83));
        assert!(infidelity(&a, &rotated).unwrap() < 1e-15);
        assert!((infidelity(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let short = StateVector::basis(3, 0);
        assert!(matches!(
            infidelity(&a, &short),
            Err(DynamicsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn entropy_of_eigenstate_and_uniform_mix() {
        let model = crate::models::Model::build(&ModelSpec::lmg(10)).unwrap();
        let spectrum = diagonalize(&model.pair, 0.6);
        let eig = spectrum.state(3);
        assert!(diagonal_entropy_in(&eig, &spectrum) < 1e-12);

        let d = 4;
        let mix: Vec<Complex64> = (0..spectrum.dimension())
            .map(|i| {
                (0..d)
                    .map(|k| spectrum.vectors[(i, k)] * Complex64::from_polar(1.0, k as f64))
                    .sum()
            })
            .collect();
        let mix = StateVector::from_amplitudes(mix).unwrap();
        assert!((diagonal_entropy_in(&mix, &spectrum) - (d as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn pulse_validation() {
        assert!(Pulse::new(0.0, vec![1.0]).is_err());
        assert!(Pulse::new(0.1, vec![]).is_err());
        assert!(matches!(
            Pulse::new(0.1, vec![1.0, f64::NAN]),
            Err(DynamicsError::NonFiniteSample { index: 1, .. })
        ));
    }

    #[test]
    fn pulse_json_round_trip_and_csv() {
        let mut pulse = Pulse::new(0.25, vec![1.0, -0.5, 3.0]).unwrap();
        pulse.sign = Sign::Backward;
        let text = serde_json::to_string(&pulse).unwrap();
        assert!(text.contains("\"sign\":-1"));
        let back: Pulse = serde_json::from_str(&text).unwrap();
        assert_eq!(back, pulse);
        assert_eq!(pulse.to_csv(), "t,gamma,sign\n0,1,-1\n0.25,-0.5,-1\n0.5,3,-1\n");
        assert!(serde_json::from_str::<Pulse>(r#"{"dt":0.1,"samples":[1.0],"sign":2}"#).is_err());
    }

    #[test]
    fn eigenstate_is_stationary() {
        let model = crate::models::Model::build(&ModelSpec::ising(6)).unwrap();
        let gs = ground_state(&model, 0.8).unwrap();
        let pulse = Pulse::constant(0.02, 500, 0.8);
        for method in [Method::Exact, Method::Split] {
            let mut prop = Propagator::for_model(&model, method);
            let out = prop.propagate(&pulse, &gs.state).unwrap();
            let i = infidelity(&out, &gs.state).unwrap();
            assert!(i < 1e-10, "{method:?} {i}");
        }
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let model = crate::models::Model::build(&ModelSpec::lmg(6)).unwrap();
        let mut prop = Propagator::for_model(&model, Method::Auto);
        let pulse = Pulse::constant(0.1, 3, 1.0);
        let err = prop.propagate(&pulse, &StateVector::basis(2, 0)).unwrap_err();
        assert_eq!(err, DynamicsError::DimensionMismatch { expected: 4, found: 2 });
    }

    #[test]
    fn walsh_hadamard_is_self_inverse_up_to_scale() {
        let mut v: Vec<Complex64> = (0..8).map(|i| c(i as f64, -(i as f64) * 0.5)).collect();
        let orig = v.clone();
        walsh_hadamard(&mut v);
        walsh_hadamard(&mut v);
        for (a, b) in v.iter().zip(&orig) {
            assert!((a / 8.0 - b).norm() < 1e-14);
        }
    }

    #[test]
    fn canonical_phase_makes_pivot_positive() {
        let s = StateVector::from_amplitudes(vec![c(0.1, 0.2), c(-0.6, 0.6), c(0.0, 0.3)]).unwrap();
        let fixed = s.clone().with_canonical_phase();
        assert!(fixed.amplitudes()[1].im.abs() < 1e-15 && fixed.amplitudes()[1].re > 0.0);
        assert!(infidelity(&s, &fixed).unwrap() < 1e-15);
    }

    fn gradient_matches_differences(spec: ModelSpec) {
        let model = crate::models::Model::build(&spec).unwrap();
        let prop = Propagator::for_model(&model, Method::Split);
        let psi0 = ground_state(&model, 10.0).unwrap().state;
        let target = ground_state(&model, 0.3).unwrap().state;
        let pulse = Pulse::from_fn(3.0, 0.05, |t| 2.0 + 1.5 * (1.3 * t).sin());
        let (value, grad) = prop.infidelity_gradient(&pulse, &psi0, &target).unwrap().unwrap();
        let mut p = prop.clone();
        let direct = infidelity(&p.propagate(&pulse, &psi0).unwrap(), &target).unwrap();
        assert!((value - direct).abs() < 1e-13);
        let h = 1e-6;
        for k in [0, 7, 31, pulse.steps() - 1] {
            let mut q = pulse.clone();
            q.samples[k] += h;
            let plus = infidelity(&p.propagate(&q, &psi0).unwrap(), &target).unwrap();
            q.samples[k] -= 2.0 * h;
            let minus = infidelity(&p.propagate(&q, &psi0).unwrap(), &target).unwrap();
            let fd = (plus - minus) / (2.0 * h);
            assert!((grad[k] - fd).abs() < 1e-7 * (1.0 + fd.abs()), "k = {k}: {} vs {fd}", grad[k]);
        }
    }

    #[test]
    fn adjoint_gradient_lmg() {
        gradient_matches_differences(ModelSpec::lmg(8));
    }

    #[test]
    fn adjoint_gradient_ising_sector() {
        gradient_matches_differences(ModelSpec::ising(5));
    }

    #[test]
    fn gradient_declines_exact_pulses() {
        let model = crate::models::Model::build(&ModelSpec::lmg(4)).unwrap();
        let prop = Propagator::for_model(&model, Method::Exact);
        let psi = model.polarized_state();
        let pulse = Pulse::constant(0.1, 5, 1.0);
        assert!(prop.infidelity_gradient(&pulse, &psi, &psi).unwrap().is_none());
    }
}
