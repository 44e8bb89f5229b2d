//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.
//!
//! Criteria that are out of reach at desk scale print FAIL without failing
//! the target; set `ACCEPTANCE_STRICT=1` to turn any FAIL into a nonzero exit.
//! `ACCEPTANCE_ONLY=1,6` runs a subset. Errors (as opposed to misses) always
//! fail the target.

mod common;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use spinrev::analysis::{fit_decay, fit_report, CurveRow, DecayCurve, EtaMode, ScalingModel};
use spinrev::config::{ExperimentConfig, Transition};
use spinrev::crab::{CrabBasis, CrabCoefficients, CrabControl};
use spinrev::dynamics::{diagonal_entropy, infidelity, Method, Propagator, Pulse};
use spinrev::experiments::{cmd_freq_scan, cmd_quench, cmd_reverse, cmd_scaling, run, Command, ReturnMethod, ScanReport};
use spinrev::models::{diagonalize, BuildOptions, Model, ModelSpec};
use spinrev::protocols::{linear_ramp, random_quench_pulse, time_reversed_pulse, QuenchSpec};

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

// Criterion 1
const LMG_PLATEAU_BAND: (f64, f64) = (0.85, 1.0);
const ISING_PLATEAU_TOLERANCE: f64 = 0.15;
const PLATEAU_RUNTIME_S: f64 = 120.0;
// Criterion 2
const RETURN_MAX_ENTROPY: f64 = 0.05;
const RETURN_MAX_INFIDELITY: f64 = 1e-2;
const RETURN_RUNTIME_S: f64 = 600.0;
// Criterion 3
const NOISE_MIN_RATIO: f64 = 1e4;
const NOISE_MIN_SEEDS: usize = 10;
// Criterion 4
const ETA_RANGE: (f64, f64) = (2.0, 5.0);
const ALPHA_RANGE: (f64, f64) = (0.9, 1.6);
const RATE_AGREEMENT: f64 = 0.3;
// Criterion 5
const GAMMA_RATIO_MAX: f64 = 0.5;
// Criterion 6
const ORACLE_MAX_INFIDELITY: f64 = 1e-8;
const SPECTRUM_TOLERANCE: f64 = 1e-10;
// Criterion 7
const NORM_TOLERANCE: f64 = 1e-9;
const REVERSAL_MAX_INFIDELITY: f64 = 1e-8;
const HALVING_MAX_INFIDELITY: f64 = 1e-6;
const FIT_RELATIVE_ERROR: f64 = 0.05;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

fn config(json: &str) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig::from_json(json, "acceptance")?)
}

fn within(x: f64, (lo, hi): (f64, f64)) -> bool {
    x > lo && x < hi
}

fn entropy_plateau(start: Instant) -> Result<Verdict> {
    let lmg = cmd_quench(&config(r#"{"model": {"kind": "lmg", "n": 20}, "sweep": {"seeds": 20}}"#)?)?.report;
    let ising = cmd_quench(&config(r#"{"model": {"kind": "ising_chain", "n": 10}, "sweep": {"seeds": 20}}"#)?)?.report;
    let lmg_ok = lmg.plateau_ratio >= LMG_PLATEAU_BAND.0 && lmg.plateau_ratio <= LMG_PLATEAU_BAND.1;
    let ising_ok = (ising.plateau_ratio - 1.0).abs() <= ISING_PLATEAU_TOLERANCE;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        lmg_ok && ising_ok && secs < PLATEAU_RUNTIME_S,
        format!(
            "LMG N=20 S_d/ln 11 = {:.3} in [{}, {}]: {}; Ising N=10 S_d/(5 ln 2) = {:.3} within {}: {}; stable {}/{}",
            lmg.plateau_ratio,
            LMG_PLATEAU_BAND.0,
            LMG_PLATEAU_BAND.1,
            lmg_ok,
            ising.plateau_ratio,
            ISING_PLATEAU_TOLERANCE,
            ising_ok,
            lmg.all_stable,
            ising.all_stable
        ),
    )
}

fn optimal_reversal(start: Instant) -> Result<Verdict> {
    let cfg = config(
        r#"{
          "model": {"kind": "lmg", "n": 20},
          "quench": {"seed": 1},
          "control": {
            "total_time": 100.0,
            "n_f": [20],
            "optimizer": {"local_search": "bfgs", "max_evaluations": 2000, "simplex_scale": 1.0, "n_restarts": 4, "seed": 0}
          },
          "noise": {"xi": [0], "seeds": 1}
        }"#,
    )?;
    let run = cmd_reverse(&cfg)?;
    let row = run.report.row(ReturnMethod::Optimized, 0.0).ok_or("no noiseless row")?;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        row.median_entropy < RETURN_MAX_ENTROPY && row.median_infidelity < RETURN_MAX_INFIDELITY && secs < RETURN_RUNTIME_S,
        format!(
            "LMG N=20 T=100 n_f=20 from S_d = {:.3}: final S_d = {:.2e} (< {RETURN_MAX_ENTROPY}), I = {:.2e} (< {RETURN_MAX_INFIDELITY})",
            run.report.disordered_entropy, row.median_entropy, row.median_infidelity
        ),
    )
}

fn noise_robustness(_: Instant) -> Result<Verdict> {
    let cfg = config(
        r#"{
          "model": {"kind": "ising_chain", "n": 10},
          "quench": {"t_max": 20.0, "n_cycles": 50, "seed": 1},
          "control": {
            "n_f": [10],
            "optimizer": {"local_search": "bfgs", "max_evaluations": 600, "simplex_scale": 1.0, "seed": 0}
          },
          "noise": {"xi": [0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1], "seeds": 10}
        }"#,
    )?;
    let run = cmd_reverse(&cfg)?;
    let r = &run.report;
    let rev = r.crossing(ReturnMethod::Reversed);
    let opt = r.crossing(ReturnMethod::Optimized);
    let seeds_ok = r.rows.iter().all(|row| row.seeds >= NOISE_MIN_SEEDS);
    let ratio = r.ratio.unwrap_or(0.0);
    verdict(
        seeds_ok && ratio >= NOISE_MIN_RATIO,
        format!(
            "Ising N=10, disordering T = {:.0}: ξ*(reversed) = {:.2e}, ξ*(optimized) = {:.2e}{} (noiseless I = {:.2e}), ratio {:.2e}{} (need >= {NOISE_MIN_RATIO:.0e})",
            r.disordering_time,
            rev.xi_star.unwrap_or(f64::NAN),
            opt.xi_star.unwrap_or(f64::NAN),
            if opt.censored { " censored" } else { "" },
            r.optimized_infidelity,
            ratio,
            if r.ratio_is_lower_bound { " lower bound" } else { "" },
        ),
    )
}

fn curve_rows(report: &ScanReport) -> Vec<CurveRow> {
    report
        .points
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
        .collect()
}

/// Per-size `n_f` grids around the controllability threshold `n_f ≈ N/2`.
const DECAY_GRIDS: [(usize, &str); 3] = [
    (10, "[1, 2, 3, 4, 5, 6]"),
    (20, "[2, 4, 6, 8, 10, 12]"),
    (40, "[4, 8, 12, 16, 20]"),
];

fn decay_law(_: Instant) -> Result<Verdict> {
    let mut rows = Vec::new();
    let mut last = None;
    for (n, grid) in DECAY_GRIDS {
        let cfg = config(&format!(
            r#"{{
              "model": {{"kind": "lmg", "n": {n}}},
              "quench": {{"seed": 1}},
              "control": {{
                "total_time": 100.0,
                "n_f": {grid},
                "optimizer": {{"local_search": "bfgs", "max_evaluations": 1500, "simplex_scale": 1.0, "n_restarts": 2, "seed": 3}}
              }}
            }}"#
        ))?;
        rows.extend(curve_rows(&cmd_freq_scan(&cfg)?.report));
        last = Some(cfg);
    }
    let cfg = last.ok_or("no sizes")?;
    let report = fit_report(&rows, cfg.control.eta, cfg.control.fit_floor);

    let mut parts = Vec::new();
    let mut pass = true;
    for t in [Transition::MaximalEntropy, Transition::Center] {
        let mut etas = Vec::new();
        for (n, _) in DECAY_GRIDS {
            match report.decay(0.0, t.label(), n) {
                Some(f) => {
                    pass &= within(f.eta, ETA_RANGE);
                    etas.push(format!("N={n} B={:.2} η={:.2}", f.b, f.eta));
                }
                None => {
                    pass = false;
                    etas.push(format!("N={n} no fit"));
                }
            }
        }
        let alpha = report
            .collapse
            .iter()
            .find(|c| c.transition == t.label())
            .and_then(|c| c.collapse.alpha);
        pass &= alpha.is_some_and(|a| within(a, ALPHA_RANGE));
        parts.push(format!("{}: {}, α = {:?}", t.label(), etas.join(", "), alpha.map(|a| (a * 100.0).round() / 100.0)));
    }
    let ratios: Vec<String> = report
        .rate_ratios
        .iter()
        .map(|r| format!("N={} {:.2}", r.n, r.ratio))
        .collect();
    pass &= report.rate_ratios.len() == DECAY_GRIDS.len()
        && report.rate_ratios.iter().all(|r| (r.ratio - 1.0).abs() <= RATE_AGREEMENT);
    verdict(
        pass,
        format!(
            "{}; B ratios {} (need η in {ETA_RANGE:?}, α in {ALPHA_RANGE:?}, ratio within {RATE_AGREEMENT})",
            parts.join("; "),
            ratios.join(", ")
        ),
    )
}

/// Per-size `n_f` grids for the full-space chain.
const SCALING_GRIDS: [(usize, &str); 3] = [
    (4, "[1, 2, 3, 4, 5, 6]"),
    (6, "[1, 2, 3, 4, 5, 6, 7, 8]"),
    (8, "[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]"),
];

fn conjecture_discrimination(_: Instant) -> Result<Verdict> {
    let mut rows = Vec::new();
    let mut last = None;
    for (n, grid) in SCALING_GRIDS {
        let cfg = config(&format!(
            r#"{{
              "model": {{"kind": "ising_chain", "n": {n}}},
              "quench": {{"seed": 1}},
              "control": {{
                "n_f": {grid},
                "transitions": ["center"],
                "optimizer": {{"local_search": "bfgs", "max_evaluations": 600, "simplex_scale": 1.0, "n_restarts": 2, "seed": 3}}
              }},
              "sweep": {{"n": [{n}], "jx": [0.0, 0.5]}}
            }}"#
        ))?;
        rows.extend(curve_rows(&cmd_scaling(&cfg)?.report));
        last = Some(cfg);
    }
    let cfg = last.ok_or("no sizes")?;
    let report = fit_report(&rows, cfg.control.eta, cfg.control.fit_floor);
    let preferred = |jx: f64| {
        report
            .scaling
            .iter()
            .find(|s| s.jx == jx)
            .and_then(|s| s.fit.preferred)
    };
    let (p0, p1) = (preferred(0.0), preferred(0.5));
    let gamma = report.gamma_ratio;
    let bs: Vec<String> = report
        .scaling
        .iter()
        .map(|s| {
            let pts: Vec<String> = s.fit.points.iter().map(|(n, b)| format!("{n}:{b:.2}")).collect();
            format!("J_x={} B {{{}}}", s.jx, pts.join(" "))
        })
        .collect();
    verdict(
        p0 == Some(ScalingModel::Linear)
            && p1 == Some(ScalingModel::Exponential)
            && gamma.is_some_and(|g| g < GAMMA_RATIO_MAX),
        format!(
            "{}; J_x=0 prefers {p0:?}, J_x=0.5 prefers {p1:?}, γ ratio {gamma:?} (< {GAMMA_RATIO_MAX})",
            bs.join("; ")
        ),
    )
}

fn oracle_equivalence(_: Instant) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for n in 2..=8 {
        let model = Model::build(&ModelSpec::lmg(n))?;
        let (fixed, drive) = lmg_full(n, 1.0);
        for _ in 0..3 {
            let pulse = random_pulse(&mut rng, 15, 0.1);
            let psi0 = model.polarized_state();
            let reference = brute_force(&fixed, &drive, &pulse, &dicke_to_full(&model, &psi0));
            let out = Propagator::for_model(&model, Method::Exact).propagate(&pulse, &psi0)?;
            worst = worst.max(full_infidelity(&dicke_to_full(&model, &out), &reference));
        }
    }
    let mut spectrum_err: f64 = 0.0;
    for j in [0.5, 1.0, 2.0] {
        let options = BuildOptions {
            full_space: true,
            ..Default::default()
        };
        let model = Model::build_with(&ModelSpec::ising(2).with_coupling(j), options)?;
        for gamma in [0.0, 0.25, 1.0, 3.0, 10.0] {
            let root = (4.0 * gamma * gamma + j * j).sqrt();
            let mut expected = [-root, -j, j, root];
            expected.sort_by(f64::total_cmp);
            for (a, b) in diagonalize(&model.pair, gamma).values.iter().zip(expected) {
                spectrum_err = spectrum_err.max((a - b).abs());
            }
        }
    }
    verdict(
        worst < ORACLE_MAX_INFIDELITY && spectrum_err < SPECTRUM_TOLERANCE,
        format!(
            "LMG vs 2^N, N=2..8, 21 random pulses: worst I = {worst:.1e} (< {ORACLE_MAX_INFIDELITY:.0e}); N=2 Ising spectrum error {spectrum_err:.1e} (< {SPECTRUM_TOLERANCE:.0e})"
        ),
    )
}

fn invariant_suite(_: Instant) -> Result<Verdict> {
    let specs = [
        ModelSpec::lmg(30),
        ModelSpec::ising(8),
        ModelSpec::ising_longitudinal(6, 0.5),
    ];
    let mut norm_err: f64 = 0.0;
    let mut reversal: f64 = 0.0;
    let mut halving: f64 = 0.0;
    let mut entropy_ok = true;
    for (k, spec) in specs.iter().enumerate() {
        let model = Model::build(spec)?;
        let psi0 = model.polarized_state();
        let q = QuenchSpec {
            seed: k as u64,
            n_cycles: 10,
            t_max: Some(3.0),
            ..Default::default()
        };
        let forward = random_quench_pulse(&q, 3.0, 0.01)?.pulse;
        for method in [Method::Exact, Method::Split] {
            let mut prop = Propagator::for_model(&model, method);
            let there = prop.propagate(&forward, &psi0)?;
            norm_err = norm_err.max((there.norm() - 1.0).abs());
            let back = prop.propagate(&time_reversed_pulse(&forward), &there)?;
            reversal = reversal.max(infidelity(&back, &psi0)?);
            let s = diagonal_entropy(&there, &model.pair, 0.5);
            entropy_ok &= s >= 0.0 && s <= (model.dimension() as f64).ln() + 1e-12;
        }
        let field = |t: f64| 10.0 * (1.0 - t / 4.0) + (3.0 * t).sin();
        let mut prop = Propagator::for_model(&model, Method::Split);
        let coarse = prop.propagate(&Pulse::from_fn(4.0, 0.01, field), &psi0)?;
        let fine = prop.propagate(&Pulse::from_fn(4.0, 0.005, field), &psi0)?;
        halving = halving.max(infidelity(&coarse, &fine)?);
    }

    let guess = linear_ramp(0.5, 10.0, 20.0, 0.01);
    let basis = CrabBasis::draw(6, 20.0, 11, 0);
    let coeffs = CrabCoefficients {
        a: vec![4.0, -7.0, 1.5, 9.0, -3.0, 2.0],
        b: vec![-2.0, 5.0, -8.0, 0.5, 6.0, -1.0],
    };
    let control = CrabControl::new(guess.clone(), basis, coeffs)?;
    let pinned = control.field_at(0.0) == guess.samples[0] && control.field_at(20.0) == *guess.samples.last().ok_or("empty")?;

    let points: Vec<(usize, f64)> = (1..=14).map(|n_f| (n_f, (-(n_f as f64 / 7.0).powi(3)).exp())).collect();
    let fit = fit_decay(&DecayCurve::new(10, points), EtaMode::Free)?;
    let fit_ok = (fit.b / 7.0 - 1.0).abs() < FIT_RELATIVE_ERROR && (fit.eta / 3.0 - 1.0).abs() < FIT_RELATIVE_ERROR;

    let cfg = config(r#"{"model": {"kind": "lmg", "n": 12}, "quench": {"n_cycles": 12, "seed": 8}, "sweep": {"seeds": 3}}"#)?;
    let a = run(Command::Quench, &cfg, Path::new("."))?;
    let b = run(Command::Quench, &cfg, Path::new("."))?;
    let identical = a.files == b.files;

    verdict(
        norm_err < NORM_TOLERANCE
            && reversal < REVERSAL_MAX_INFIDELITY
            && halving < HALVING_MAX_INFIDELITY
            && pinned
            && entropy_ok
            && fit_ok
            && identical,
        format!(
            "norm {norm_err:.1e}, reversal I {reversal:.1e}, dt-halving I {halving:.1e}, pinned {pinned}, S_d bounds {entropy_ok}, fit B = {:.3} η = {:.3}, byte-identical {identical}",
            fit.b, fit.eta
        ),
    )
}

type Criterion = (u32, &'static str, fn(Instant) -> Result<Verdict>);

const CRITERIA: [Criterion; 7] = [
    (1, "entropy plateau", entropy_plateau),
    (2, "optimal reversal", optimal_reversal),
    (3, "noise robustness", noise_robustness),
    (4, "decay law", decay_law),
    (5, "conjecture discrimination", conjecture_discrimination),
    (6, "oracle equivalence", oracle_equivalence),
    (7, "invariant suite", invariant_suite),
];

fn main() {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut out = std::io::stdout().lock();
    let (mut passed, mut failed, mut errors) = (0, 0, 0);
    for (id, name, check) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = check(start);
        let secs = start.elapsed().as_secs_f64();
        let line = match result {
            Ok(v) if v.pass => {
                passed += 1;
                format!("PASS  {id} {name} [{secs:.1} s]: {}", v.detail)
            }
            Ok(v) => {
                failed += 1;
                format!("FAIL  {id} {name} [{secs:.1} s]: {}", v.detail)
            }
            Err(e) => {
                errors += 1;
                format!("ERROR {id} {name} [{secs:.1} s]: {e}")
            }
        };
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
    }
    let _ = writeln!(out, "acceptance: {passed} passed, {failed} failed, {errors} errors");
    if errors > 0 || (strict && failed > 0) {
        std::process::exit(1);
    }
}
