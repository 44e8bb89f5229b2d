//! Random-quench disordering, exact time reversal, and multiplicative field noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{steps_for, Pulse, Sign};

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("invalid quench spec: {0}")]
    Quench(String),
    #[error("invalid noise spec: {0}")]
    Noise(String),
}

/// Seeded stream for a protocol instance. Distinct `stream` values give
/// independent sequences for the same seed.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const QUENCH_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Alternating quench schedule between two field values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuenchSpec {
    #[serde(default = "default_gamma1")]
    pub gamma1: f64,
    #[serde(default = "default_gamma2")]
    pub gamma2: f64,
    /// Longest waiting time; `None` means `100/Δ` with `Δ` the critical gap.
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default = "default_cycles")]
    pub n_cycles: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_gamma1() -> f64 {
    10.0
}
fn default_gamma2() -> f64 {
    0.5
}
fn default_cycles() -> usize {
    50
}

impl Default for QuenchSpec {
    fn default() -> Self {
        Self {
            gamma1: default_gamma1(),
            gamma2: default_gamma2(),
            t_max: None,
            n_cycles: default_cycles(),
            seed: 0,
        }
    }
}

impl QuenchSpec {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(self.gamma1.is_finite() && self.gamma2.is_finite()) {
            return Err(ProtocolError::Quench("field values must be finite".into()));
        }
        if let Some(t) = self.t_max {
            if !(t.is_finite() && t > 0.0) {
                return Err(ProtocolError::Quench(format!("t_max must be positive, got {t}")));
            }
        }
        Ok(())
    }

    /// Waiting times `t_max·r_i` before rounding to the step grid.
    pub fn durations(&self, t_max: f64) -> Vec<f64> {
        let mut rng = rng_for(self.seed, QUENCH_STREAM);
        (0..self.n_cycles)
            .map(|_| t_max * rng.random::<f64>())
            .collect()
    }
}

/// A disordering pulse with its segment boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct QuenchPulse {
    pub pulse: Pulse,
    /// Number of steps in each segment, in order.
    pub segment_steps: Vec<usize>,
}

impl QuenchPulse {
    /// Step index at which each segment ends.
    pub fn segment_ends(&self) -> Vec<usize> {
        self.segment_steps
            .iter()
            .scan(0, |acc, &s| {
                *acc += s;
                Some(*acc)
            })
            .collect()
    }
}

/// Segments alternate between the two fields and the last one is always at
/// `gamma2`, so a return path starts from the low field. Segment `i` lasts
/// `t_max·r_i`, rounded down to whole steps with a one-step floor.
pub fn random_quench_pulse(spec: &QuenchSpec, t_max: f64, dt: f64) -> Result<QuenchPulse, ProtocolError> {
    spec.validate()?;
    if spec.n_cycles == 0 {
        return Err(ProtocolError::Quench("n_cycles must be at least 1".into()));
    }
    if !(t_max.is_finite() && t_max > 0.0 && dt > 0.0) {
        return Err(ProtocolError::Quench(format!(
            "need t_max > 0 and dt > 0, got {t_max} and {dt}"
        )));
    }
    quench_from_durations(spec, &spec.durations(t_max), dt)
}

pub fn quench_from_durations(spec: &QuenchSpec, durations: &[f64], dt: f64) -> Result<QuenchPulse, ProtocolError> {
    let mut samples = Vec::new();
    let mut segment_steps = Vec::with_capacity(durations.len());
    let n = durations.len();
    for (i, &tau) in durations.iter().enumerate() {
        // Tolerate representation error before flooring.
        let steps = ((tau / dt) * (1.0 + 1e-12)).floor().max(1.0) as usize;
        let gamma = if (n - 1 - i) % 2 == 0 { spec.gamma2 } else { spec.gamma1 };
        samples.extend(std::iter::repeat_n(gamma, steps));
        segment_steps.push(steps);
    }
    if samples.is_empty() {
        return Err(ProtocolError::Quench("no segments".into()));
    }
    Ok(QuenchPulse {
        pulse: Pulse {
            dt,
            samples,
            sign: Sign::Forward,
        },
        segment_steps,
    })
}

/// Reversed sample order with the coupling sign flipped; applying `p` and then
/// the result is the identity.
pub fn time_reversed_pulse(p: &Pulse) -> Pulse {
    Pulse {
        dt: p.dt,
        samples: p.samples.iter().rev().copied().collect(),
        sign: p.sign.flipped(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub xi: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_correlation")]
    pub correlation_step: usize,
}

fn default_correlation() -> usize {
    1
}

impl NoiseSpec {
    pub fn new(xi: f64, seed: u64) -> Self {
        Self {
            xi,
            seed,
            correlation_step: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(self.xi.is_finite() && self.xi >= 0.0) {
            return Err(ProtocolError::Noise(format!("xi must be >= 0, got {}", self.xi)));
        }
        if self.correlation_step == 0 {
            return Err(ProtocolError::Noise("correlation_step must be >= 1".into()));
        }
        Ok(())
    }
}

/// `Γ̃ = Γ·(1 + ξ·r)` with `r ~ U[−1, 1]` drawn fresh every `correlation_step` steps.
pub fn add_noise(p: &Pulse, noise: &NoiseSpec) -> Result<Pulse, ProtocolError> {
    noise.validate()?;
    let mut out = p.clone();
    if noise.xi == 0.0 {
        return Ok(out);
    }
    let mut rng = rng_for(noise.seed, NOISE_STREAM);
    for block in out.samples.chunks_mut(noise.correlation_step) {
        let factor = 1.0 + noise.xi * rng.random_range(-1.0..=1.0);
        block.iter_mut().for_each(|g| *g *= factor);
    }
    Ok(out)
}

/// Linear ramp from `from` to `to` over `total_time`, sampled at step midpoints.
pub fn linear_ramp(from: f64, to: f64, total_time: f64, dt: f64) -> Pulse {
    let steps = steps_for(total_time, dt);
    Pulse::from_fn(total_time, total_time / steps as f64, |t| {
        from + (to - from) * t / total_time
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_full_segment() {
        let spec = QuenchSpec {
            n_cycles: 1,
            ..Default::default()
        };
        let q = quench_from_durations(&spec, &[5.0], 0.01).unwrap();
        assert_eq!(q.pulse.steps(), 500);
        assert!(q.pulse.samples.iter().all(|&g| g == spec.gamma2));
    }

    #[test]
    fn same_seed_same_pulse() {
        let spec = QuenchSpec {
            seed: 11,
            n_cycles: 7,
            ..Default::default()
        };
        let a = random_quench_pulse(&spec, 3.0, 0.01).unwrap();
        let b = random_quench_pulse(&spec, 3.0, 0.01).unwrap();
        assert_eq!(a, b);
        let other = random_quench_pulse(&QuenchSpec { seed: 12, ..spec }, 3.0, 0.01).unwrap();
        assert_ne!(a.pulse.samples, other.pulse.samples);
    }

    #[test]
    fn segments_alternate_and_stay_in_range() {
        let spec = QuenchSpec {
            seed: 3,
            n_cycles: 40,
            ..Default::default()
        };
        let dt = 0.05;
        let q = random_quench_pulse(&spec, 2.0, dt).unwrap();
        let mut pos = 0;
        for (i, &s) in q.segment_steps.iter().enumerate() {
            assert!(s >= 1 && s as f64 * dt <= 2.0 + 1e-12);
            let expect = if (39 - i) % 2 == 0 { spec.gamma2 } else { spec.gamma1 };
            assert!(q.pulse.samples[pos..pos + s].iter().all(|&g| g == expect));
            pos += s;
        }
        assert_eq!(pos, q.pulse.steps());
    }

    #[test]
    fn mean_duration_is_half_t_max() {
        let t_max = 10.0;
        let mut total = 0.0;
        let mut count = 0;
        for seed in 0..200 {
            let spec = QuenchSpec {
                seed,
                n_cycles: 50,
                ..Default::default()
            };
            let d = spec.durations(t_max);
            total += d.iter().sum::<f64>();
            count += d.len();
        }
        let mean = total / count as f64;
        assert!((mean / (t_max / 2.0) - 1.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn zero_cycles_rejected() {
        let spec = QuenchSpec {
            n_cycles: 0,
            ..Default::default()
        };
        assert!(random_quench_pulse(&spec, 1.0, 0.01).is_err());
    }

    #[test]
    fn reversal_is_an_involution() {
        let p = Pulse::new(0.1, vec![1.0, 2.0, 3.5]).unwrap();
        let r = time_reversed_pulse(&p);
        assert_eq!(r.samples, vec![3.5, 2.0, 1.0]);
        assert_eq!(r.sign, Sign::Backward);
        assert_eq!(time_reversed_pulse(&r), p);
    }

    #[test]
    fn zero_noise_is_identity_and_bound_holds() {
        let p = Pulse::new(0.1, vec![1.0, -2.0, 3.5, 0.0, 7.0]).unwrap();
        assert_eq!(add_noise(&p, &NoiseSpec::new(0.0, 4)).unwrap(), p);
        let xi = 0.3;
        let noisy = add_noise(&p, &NoiseSpec::new(xi, 4)).unwrap();
        assert_eq!(noisy.sign, p.sign);
        for (a, b) in noisy.samples.iter().zip(&p.samples) {
            assert!((a - b).abs() <= xi * b.abs() + 1e-15);
        }
        assert!(add_noise(&p, &NoiseSpec::new(-1.0, 0)).is_err());
    }

    #[test]
    fn correlated_noise_is_blockwise() {
        let p = Pulse::constant(0.1, 10, 2.0);
        let noisy = add_noise(
            &p,
            &NoiseSpec {
                xi: 0.5,
                seed: 1,
                correlation_step: 4,
            },
        )
        .unwrap();
        assert!(noisy.samples[..4].iter().all(|&g| g == noisy.samples[0]));
        assert!(noisy.samples[4..8].iter().all(|&g| g == noisy.samples[4]));
        assert_ne!(noisy.samples[0], noisy.samples[4]);
    }
}
