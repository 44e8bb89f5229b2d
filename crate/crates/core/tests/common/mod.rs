//! Full `2^N` product-space references built from explicit Pauli matrices.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use spinrev::dynamics::{infidelity, Method, Pulse, StateVector};
use spinrev::models::{BasisLabel, Model};

/// `Σσˣ_i` and `Σσᶻ_i` on `n` sites; bit set means spin down.
pub fn collective(n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let dim = 1 << n;
    let mut sx = DMatrix::zeros(dim, dim);
    let mut sz = DMatrix::zeros(dim, dim);
    for x in 0..dim {
        for i in 0..n {
            sx[(x ^ (1 << i), x)] += 1.0;
            sz[(x, x)] += if x >> i & 1 == 1 { -1.0 } else { 1.0 };
        }
    }
    (sx, sz)
}

/// `−(J/2N)(Σσˣ)²` and `−Σσᶻ` on the full space.
pub fn lmg_full(n: usize, j: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (sx, sz) = collective(n);
    (&sx * &sx * (-j / (2.0 * n as f64)), -sz)
}

pub fn ising_full(n: usize, j: f64, jx: f64, periodic: bool) -> (DMatrix<f64>, DMatrix<f64>) {
    let dim = 1 << n;
    let mut fixed = DMatrix::zeros(dim, dim);
    let mut bonds: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    if periodic && n > 2 {
        bonds.push((n - 1, 0));
    }
    for x in 0..dim {
        for &(a, b) in &bonds {
            fixed[(x ^ (1 << a) ^ (1 << b), x)] -= j;
        }
        for i in 0..n {
            fixed[(x ^ (1 << i), x)] -= jx;
        }
    }
    (fixed, -collective(n).1)
}

/// Evolves `psi` through piecewise-constant `pulse` by diagonalizing every step.
pub fn brute_force(fixed: &DMatrix<f64>, drive: &DMatrix<f64>, pulse: &Pulse, psi: &[Complex64]) -> Vec<Complex64> {
    let mut psi = psi.to_vec();
    for &g in &pulse.samples {
        let eig = SymmetricEigen::new(fixed + drive * g);
        let v = &eig.eigenvectors;
        let d = psi.len();
        let coeffs: Vec<Complex64> = (0..d)
            .map(|k| {
                let c: Complex64 = (0..d).map(|i| psi[i] * v[(i, k)]).sum();
                c * Complex64::from_polar(1.0, -eig.eigenvalues[k] * pulse.dt)
            })
            .collect();
        psi = (0..d)
            .map(|i| (0..d).map(|k| coeffs[k] * v[(i, k)]).sum())
            .collect();
    }
    psi
}

pub fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Maps a Dicke-basis state to the symmetric full-space vector.
pub fn dicke_to_full(model: &Model, psi: &StateVector) -> Vec<Complex64> {
    let n = model.spec.n;
    let mut full = vec![Complex64::new(0.0, 0.0); 1 << n];
    for (label, amp) in model.basis.labels.iter().zip(psi.amplitudes()) {
        let BasisLabel::Dicke { twice_sz } = label else {
            panic!("not a Dicke basis")
        };
        let down = (n as i64 - twice_sz) as usize / 2;
        let norm = binomial(n, down).sqrt();
        for (x, slot) in full.iter_mut().enumerate() {
            if x.count_ones() as usize == down {
                *slot = amp / norm;
            }
        }
    }
    full
}

pub fn sector_to_full(model: &Model, psi: &StateVector) -> Vec<Complex64> {
    let mut full = vec![Complex64::new(0.0, 0.0); 1 << model.spec.n];
    for (label, amp) in model.basis.labels.iter().zip(psi.amplitudes()) {
        let BasisLabel::Bits(x) = label else { panic!("not a bit basis") };
        full[*x as usize] = *amp;
    }
    full
}

pub fn full_infidelity(a: &[Complex64], b: &[Complex64]) -> f64 {
    let sa = StateVector::from_amplitudes(a.to_vec()).unwrap();
    let sb = StateVector::from_amplitudes(b.to_vec()).unwrap();
    infidelity(&sa, &sb).unwrap()
}

pub fn random_pulse(rng: &mut ChaCha8Rng, steps: usize, dt: f64) -> Pulse {
    Pulse::new(dt, (0..steps).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
}

/// Split steps carry a fourth-order error, so they are compared on a finer grid.
pub fn refine(pulse: &Pulse, method: Method) -> Pulse {
    if method == Method::Exact {
        return pulse.clone();
    }
    let k = 20;
    let samples = pulse.samples.iter().flat_map(|&g| std::iter::repeat_n(g, k)).collect();
    Pulse::new(pulse.dt / k as f64, samples).unwrap()
}

