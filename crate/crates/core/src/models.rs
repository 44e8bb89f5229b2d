//! Spin Hamiltonians restricted to the symmetry sector of the polarized state.
//!
//! Every model is written as `H(Γ) = h_fixed + Γ·h_drive`, where `h_drive = −Σσᶻ`
//! and `h_fixed` holds the spin-spin coupling plus the optional longitudinal
//! field. Ising kinds use bitstring bases (bit `i` set means spin `i` points
//! down, so index 0 is the all-up state). The LMG model uses Dicke states
//! `|S = N/2, m⟩` ordered from `m = S` downwards.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::StateVector;

/// Largest sector dimension built by default.
pub const DEFAULT_DIMENSION_CAP: usize = 1 << 14;

/// Field used to prepare the initial polarized ground state.
pub const DEFAULT_INITIAL_FIELD: f64 = 10.0;

/// Longitudinal field used when the non-integrable chain is requested without one.
pub const DEFAULT_LONGITUDINAL_FIELD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("sector dimension {dimension} exceeds the cap of {cap}")]
    TooLarge { dimension: usize, cap: usize },
    #[error("field value must be finite, got {0}")]
    NonFiniteField(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    IsingChain,
    IsingChainLongitudinal,
    Lmg,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Open,
    Periodic,
}

/// Which of the three Hamiltonians, with its size and couplings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n: usize,
    #[serde(default = "default_coupling")]
    pub j: f64,
    #[serde(default)]
    pub jx: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Boundary>,
}

fn default_coupling() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn ising(n: usize) -> Self {
        Self {
            kind: ModelKind::IsingChain,
            n,
            j: 1.0,
            jx: 0.0,
            boundary: Some(Boundary::Open),
        }
    }

    pub fn ising_longitudinal(n: usize, jx: f64) -> Self {
        Self {
            kind: ModelKind::IsingChainLongitudinal,
            n,
            j: 1.0,
            jx,
            boundary: Some(Boundary::Open),
        }
    }

    pub fn lmg(n: usize) -> Self {
        Self {
            kind: ModelKind::Lmg,
            n,
            j: 1.0,
            jx: 0.0,
            boundary: None,
        }
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        if self.kind != ModelKind::Lmg {
            self.boundary = Some(boundary);
        }
        self
    }

    pub fn with_coupling(mut self, j: f64) -> Self {
        self.j = j;
        self
    }

    pub fn is_integrable(&self) -> bool {
        self.kind != ModelKind::IsingChainLongitudinal
    }

    /// Boundary of an Ising kind, open when unset.
    pub fn boundary(&self) -> Boundary {
        self.boundary.unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Invalid(msg));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if !(self.j.is_finite() && self.j > 0.0) {
            return bad(format!("j must be positive, got {}", self.j));
        }
        if !self.jx.is_finite() {
            return bad(format!("jx must be finite, got {}", self.jx));
        }
        match self.kind {
            ModelKind::IsingChain | ModelKind::Lmg if self.jx != 0.0 => {
                bad(format!("{:?} requires jx = 0, got {}", self.kind, self.jx))
            }
            ModelKind::IsingChainLongitudinal if self.jx == 0.0 => {
                bad("ising_chain_longitudinal requires jx != 0".into())
            }
            ModelKind::Lmg if self.boundary.is_some() => {
                bad("lmg carries no boundary attribute".into())
            }
            _ => Ok(()),
        }
    }

    /// Nearest-neighbour bonds of the chain.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let mut bonds: Vec<_> = (0..self.n - 1).map(|i| (i, i + 1)).collect();
        if self.boundary() == Boundary::Periodic && self.n > 2 {
            bonds.push((self.n - 1, 0));
        }
        bonds
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectorId {
    /// Even number of down spins: the spin-flip parity of the polarized state.
    EvenParity,
    /// No symmetry reduction.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisLabel {
    /// Computational basis state; bit `i` set means spin `i` down.
    Bits(u64),
    /// Dicke state with `2·S_z = twice_sz` inside the `S = N/2` multiplet.
    Dicke { twice_sz: i64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SectorBasis {
    pub labels: Vec<BasisLabel>,
    pub sector_id: SectorId,
}

impl SectorBasis {
    pub fn dimension(&self) -> usize {
        self.labels.len()
    }

    /// Position of the all-up state, which every sector contains.
    pub fn polarized_index(&self) -> usize {
        0
    }
}

/// `H(Γ) = h_fixed + Γ·h_drive` on one sector.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianPair {
    pub h_fixed: DMatrix<f64>,
    pub h_drive: DMatrix<f64>,
}

impl HamiltonianPair {
    pub fn dimension(&self) -> usize {
        self.h_fixed.nrows()
    }

    pub fn at(&self, gamma: f64) -> DMatrix<f64> {
        &self.h_fixed + &self.h_drive * gamma
    }

    /// Diagonal of `h_drive` when it is diagonal in the basis (true for every model built here).
    pub fn drive_diagonal(&self) -> Option<Vec<f64>> {
        let d = self.dimension();
        for c in 0..d {
            for r in 0..d {
                if r != c && self.h_drive[(r, c)] != 0.0 {
                    return None;
                }
            }
        }
        Some((0..d).map(|i| self.h_drive[(i, i)]).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuildOptions {
    pub dimension_cap: usize,
    /// Build Ising chains in the full `2^N` space even when parity is conserved.
    pub full_space: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            dimension_cap: DEFAULT_DIMENSION_CAP,
            full_space: false,
        }
    }
}

/// A built model: its spec, sector basis, and Hamiltonian pair.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub basis: SectorBasis,
    pub pair: HamiltonianPair,
}

impl Model {
    pub fn build(spec: &ModelSpec) -> Result<Self, ModelError> {
        Self::build_with(spec, BuildOptions::default())
    }

    pub fn build_with(spec: &ModelSpec, options: BuildOptions) -> Result<Self, ModelError> {
        let (basis, pair) = build_model_with(spec, options)?;
        Ok(Self {
            spec: spec.clone(),
            basis,
            pair,
        })
    }

    pub fn dimension(&self) -> usize {
        self.basis.dimension()
    }

    /// The all-up basis state.
    pub fn polarized_state(&self) -> StateVector {
        StateVector::basis(self.dimension(), self.basis.polarized_index())
    }
}

pub fn build_model(spec: &ModelSpec) -> Result<(SectorBasis, HamiltonianPair), ModelError> {
    build_model_with(spec, BuildOptions::default())
}

pub fn build_model_with(
    spec: &ModelSpec,
    options: BuildOptions,
) -> Result<(SectorBasis, HamiltonianPair), ModelError> {
    spec.validate()?;
    match spec.kind {
        ModelKind::Lmg => Ok(build_lmg(spec)),
        ModelKind::IsingChain | ModelKind::IsingChainLongitudinal => build_ising(spec, options),
    }
}

fn build_ising(
    spec: &ModelSpec,
    options: BuildOptions,
) -> Result<(SectorBasis, HamiltonianPair), ModelError> {
    let n = spec.n;
    let restrict = spec.jx == 0.0 && !options.full_space;
    let dimension = if n >= 63 {
        usize::MAX
    } else if restrict {
        1usize << (n - 1)
    } else {
        1usize << n
    };
    if dimension > options.dimension_cap {
        return Err(ModelError::TooLarge {
            dimension,
            cap: options.dimension_cap,
        });
    }

    let states: Vec<u64> = (0..1u64 << n)
        .filter(|s| !restrict || s.count_ones() % 2 == 0)
        .collect();
    let mut index = vec![usize::MAX; 1 << n];
    for (i, &s) in states.iter().enumerate() {
        index[s as usize] = i;
    }

    let d = states.len();
    let mut h_fixed = DMatrix::zeros(d, d);
    let mut h_drive = DMatrix::zeros(d, d);
    let bonds = spec.bonds();
    for (col, &s) in states.iter().enumerate() {
        let down = s.count_ones() as f64;
        h_drive[(col, col)] = -(n as f64 - 2.0 * down);
        for &(a, b) in &bonds {
            let row = index[(s ^ (1 << a) ^ (1 << b)) as usize];
            h_fixed[(row, col)] -= spec.j;
        }
        if spec.jx != 0.0 {
            for site in 0..n {
                let row = index[(s ^ (1 << site)) as usize];
                h_fixed[(row, col)] -= spec.jx;
            }
        }
    }

    let basis = SectorBasis {
        labels: states.into_iter().map(BasisLabel::Bits).collect(),
        sector_id: if restrict {
            SectorId::EvenParity
        } else {
            SectorId::Full
        },
    };
    Ok((basis, HamiltonianPair { h_fixed, h_drive }))
}

/// Collective-spin form of the infinite-range model on the `S = N/2` multiplet:
/// `Σ_{i<j} σˣσˣ = 2S_x² − N/2`, and the constant is dropped.
fn build_lmg(spec: &ModelSpec) -> (SectorBasis, HamiltonianPair) {
    let n = spec.n as i64;
    // twice m, running S, S-2, ... down to -S or -S+1.
    let twice_m: Vec<i64> = (0..=n / 2).map(|k| n - 4 * k).collect();
    let d = twice_m.len();
    let s = n as f64 / 2.0;

    // <m-2| S_x² |m> = c-(m) c-(m-1) / 4 with c-(m) = sqrt(S(S+1) - m(m-1)).
    let lower = |m: f64| (s * (s + 1.0) - m * (m - 1.0)).max(0.0).sqrt();
    let scale = -2.0 * spec.j / spec.n as f64;

    let mut h_fixed = DMatrix::zeros(d, d);
    let mut h_drive = DMatrix::zeros(d, d);
    for (i, &tm) in twice_m.iter().enumerate() {
        let m = tm as f64 / 2.0;
        // <m|S_x²|m> = (S(S+1) - m²)/2
        h_fixed[(i, i)] = scale * (s * (s + 1.0) - m * m) / 2.0;
        h_drive[(i, i)] = -2.0 * m;
        if i + 1 < d {
            // i+1 holds m-2
            let v = scale * 0.25 * lower(m) * lower(m - 1.0);
            h_fixed[(i, i + 1)] = v;
            h_fixed[(i + 1, i)] = v;
        }
    }

    let basis = SectorBasis {
        labels: twice_m
            .into_iter()
            .map(|twice_sz| BasisLabel::Dicke { twice_sz })
            .collect(),
        sector_id: SectorId::EvenParity,
    };
    (basis, HamiltonianPair { h_fixed, h_drive })
}

/// Eigenvalues ascending, with eigenvectors as matching columns.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn of(matrix: DMatrix<f64>) -> Self {
        let d = matrix.nrows();
        let eig = SymmetricEigen::new(matrix);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let mut vectors = DMatrix::zeros(d, d);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        reorthonormalize(&mut vectors);
        Self { values, vectors }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn state(&self, k: usize) -> StateVector {
        StateVector::from_real(self.vectors.column(k).iter().copied())
    }
}

/// One pass of modified Gram–Schmidt. Solver output is orthonormal only to
/// a few ulps times `d`, which shows up as slow norm drift over long runs.
fn reorthonormalize(v: &mut DMatrix<f64>) {
    let d = v.ncols();
    for k in 0..d {
        for j in 0..k {
            let overlap = v.column(j).dot(&v.column(k));
            let (pj, mut pk) = v.columns_range_pair_mut(j, k);
            pk.axpy(-overlap, &pj, 1.0);
        }
        let norm = v.column(k).norm();
        v.column_mut(k).scale_mut(1.0 / norm);
    }
}

pub fn diagonalize(pair: &HamiltonianPair, gamma: f64) -> Spectrum {
    Spectrum::of(pair.at(gamma))
}

/// Lowest eigenvector with its energy; `degenerate` is set when the gap to
/// the next level is below `1e-12`.
#[derive(Clone, Debug)]
pub struct GroundState {
    pub state: StateVector,
    pub energy: f64,
    pub gap: f64,
    pub degenerate: bool,
}

pub fn ground_state(model: &Model, gamma: f64) -> Result<GroundState, ModelError> {
    if !gamma.is_finite() {
        return Err(ModelError::NonFiniteField(gamma));
    }
    let spectrum = diagonalize(&model.pair, gamma);
    let gap = spectrum
        .values
        .get(1)
        .map_or(f64::INFINITY, |e1| e1 - spectrum.values[0]);
    Ok(GroundState {
        state: spectrum.state(0).with_canonical_phase(),
        energy: spectrum.values[0],
        gap,
        degenerate: gap < 1e-12,
    })
}

/// Gap between the two lowest levels at the critical field `Γ = J`, inside the
/// ground-state sector.
pub fn critical_gap(model: &Model) -> Result<f64, ModelError> {
    if !model.spec.is_integrable() {
        return Err(ModelError::Invalid(
            "critical gap is defined for the integrable kinds only".into(),
        ));
    }
    let spectrum = diagonalize(&model.pair, model.spec.j);
    Ok(spectrum.values[1] - spectrum.values[0])
}

/// Eigenstate whose energy is closest to the spectrum midpoint, ties toward the lower index.
pub fn center_state(spectrum: &Spectrum) -> (usize, StateVector) {
    let lo = spectrum.values[0];
    let hi = spectrum.values[spectrum.dimension() - 1];
    let mid = 0.5 * (lo + hi);
    let mut best = 0;
    for (k, e) in spectrum.values.iter().enumerate() {
        if (e - mid).abs() < (spectrum.values[best] - mid).abs() {
            best = k;
        }
    }
    (best, spectrum.state(best).with_canonical_phase())
}

/// Orthonormal basis (as columns) of the fully symmetric subspace of an
/// Ising-kind basis: sums over orbits of the chain reflection (and the
/// translations when periodic), restricted to the polarized state's
/// spin-flip parity when `J_x = 0`. `None` for the Dicke basis, which has no
/// residual symmetry.
pub fn symmetric_subspace(model: &Model) -> Option<DMatrix<f64>> {
    let n = model.spec.n;
    let mut index = std::collections::HashMap::new();
    for (i, label) in model.basis.labels.iter().enumerate() {
        match label {
            BasisLabel::Bits(x) => index.insert(*x, i),
            BasisLabel::Dicke { .. } => return None,
        };
    }
    let reflect = |x: u64| (0..n).fold(0u64, |acc, i| acc | ((x >> i & 1) << (n - 1 - i)));
    let translate = |x: u64| ((x << 1) | (x >> (n - 1))) & ((1u64 << n) - 1);
    let periodic = model.spec.boundary() == Boundary::Periodic;

    let mut seen = vec![false; model.dimension()];
    let mut columns = Vec::new();
    for (i, label) in model.basis.labels.iter().enumerate() {
        let BasisLabel::Bits(x) = *label else { unreachable!() };
        if seen[i] || (model.spec.jx == 0.0 && x.count_ones() % 2 == 1) {
            continue;
        }
        let mut orbit = vec![x];
        let mut k = 0;
        while k < orbit.len() {
            let y = orbit[k];
            let images = [Some(reflect(y)), periodic.then(|| translate(y))];
            for z in images.into_iter().flatten() {
                if !orbit.contains(&z) {
                    orbit.push(z);
                }
            }
            k += 1;
        }
        let mut col = DVector::zeros(model.dimension());
        let w = 1.0 / (orbit.len() as f64).sqrt();
        for y in orbit {
            let j = index[&y];
            seen[j] = true;
            col[j] = w;
        }
        columns.push(col);
    }
    Some(DMatrix::from_columns(&columns))
}

/// [`center_state`] among the eigenstates that share every symmetry of
/// `ground`; states outside its sector can never be steered into it. Falls
/// back to the whole basis when `ground` is not fully symmetric.
pub fn symmetric_center_state(model: &Model, ground: &StateVector, gamma: f64) -> (f64, StateVector) {
    let h = model.pair.at(gamma);
    if let Some(q) = symmetric_subspace(model) {
        let weight: f64 = (0..q.ncols())
            .map(|c| {
                let col = q.column(c);
                let amp: num_complex::Complex64 = ground.amplitudes().iter().zip(col.iter()).map(|(a, v)| a * v).sum();
                amp.norm_sqr()
            })
            .sum();
        if weight > 1.0 - 1e-9 {
            let spectrum = Spectrum::of(q.transpose() * &h * &q);
            let (k, _) = center_state(&spectrum);
            let v = &q * spectrum.vectors.column(k);
            return (spectrum.values[k], StateVector::from_real(v.iter().copied()).with_canonical_phase());
        }
    }
    let spectrum = Spectrum::of(h);
    let (k, state) = center_state(&spectrum);
    (spectrum.values[k], state)
}
