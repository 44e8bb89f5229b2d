//! Fits for the control-complexity study: stretched-exponential decay of the
//! best infidelity with `n_f`, linear vs exponential growth of the decay
//! rate `B(N)`, and the size exponent `α` that collapses curves onto `n_f/N^α`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("need at least {needed} usable points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("invalid decay curve: {0}")]
    InvalidCurve(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub n_f: usize,
    pub infidelity: f64,
    #[serde(default = "one")]
    pub seeds: usize,
}

fn one() -> usize {
    1
}

/// Best infidelity against the number of harmonics at one system size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub n: usize,
    pub points: Vec<DecayPoint>,
}

impl DecayCurve {
    pub fn new(n: usize, points: impl IntoIterator<Item = (usize, f64)>) -> Self {
        Self {
            n,
            points: points
                .into_iter()
                .map(|(n_f, infidelity)| DecayPoint {
                    n_f,
                    infidelity,
                    seeds: 1,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.points.windows(2).any(|w| w[1].n_f <= w[0].n_f) {
            return Err(AnalysisError::InvalidCurve("n_f must be strictly increasing".into()));
        }
        if let Some(p) = self
            .points
            .iter()
            .find(|p| !(p.infidelity > 0.0 && p.infidelity <= 1.0))
        {
            return Err(AnalysisError::InvalidCurve(format!(
                "infidelity {} at n_f = {} outside (0, 1]",
                p.infidelity, p.n_f
            )));
        }
        Ok(())
    }

    /// Same curve with each point replaced by the best value at or below its `n_f`.
    pub fn best_so_far(&self) -> Self {
        let mut best = f64::INFINITY;
        Self {
            n: self.n,
            points: self
                .points
                .iter()
                .map(|p| {
                    best = best.min(p.infidelity);
                    DecayPoint {
                        infidelity: best,
                        ..p.clone()
                    }
                })
                .collect(),
        }
    }
}

/// Points with `I` above this are pre-asymptotic and left out of fits.
pub const MAX_FIT_INFIDELITY: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum EtaMode {
    Free,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub b: f64,
    pub eta: f64,
    /// Mean squared error of `ln(−ln I)`.
    pub residual: f64,
    pub used: usize,
    /// `n_f` values left out (I ≥ 0.9 or non-positive).
    pub excluded: Vec<usize>,
}

/// `(ln n_f, ln(−ln I))` for the points in `(min_infidelity, 0.9)`.
fn linearized(curve: &DecayCurve, min_infidelity: f64) -> (Vec<(f64, f64)>, Vec<usize>) {
    let mut used = Vec::new();
    let mut excluded = Vec::new();
    for p in &curve.points {
        if p.infidelity > min_infidelity && p.infidelity < MAX_FIT_INFIDELITY && p.n_f > 0 {
            used.push(((p.n_f as f64).ln(), (-p.infidelity.ln()).ln()));
        } else {
            excluded.push(p.n_f);
        }
    }
    (used, excluded)
}

/// Fits `I = exp(−(n_f/B)^η)` by least squares of `ln(−ln I)` on `ln n_f`.
pub fn fit_decay(curve: &DecayCurve, mode: EtaMode) -> Result<DecayFit, AnalysisError> {
    fit_decay_above(curve, mode, 0.0)
}

/// As [`fit_decay`], also dropping points at or below `min_infidelity`
/// (an optimizer floor carries no decay information).
pub fn fit_decay_above(curve: &DecayCurve, mode: EtaMode, min_infidelity: f64) -> Result<DecayFit, AnalysisError> {
    let (pts, excluded) = linearized(curve, min_infidelity);
    if pts.len() < 4 {
        return Err(AnalysisError::TooFewPoints {
            needed: 4,
            found: pts.len(),
        });
    }
    let (eta, intercept) = match mode {
        EtaMode::Free => {
            let (slope, intercept) = least_squares(&pts);
            (slope, intercept)
        }
        EtaMode::Fixed(eta) => {
            let intercept = pts.iter().map(|(x, y)| y - eta * x).sum::<f64>() / pts.len() as f64;
            (eta, intercept)
        }
    };
    let residual = pts
        .iter()
        .map(|(x, y)| (y - (intercept + eta * x)).powi(2))
        .sum::<f64>()
        / pts.len() as f64;
    Ok(DecayFit {
        b: (-intercept / eta).exp(),
        eta,
        residual,
        used: pts.len(),
        excluded,
    })
}

/// Ordinary least squares `y = intercept + slope·x`.
fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingModel {
    Linear,
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    /// `B = a·N + b`.
    pub a: f64,
    pub b: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    /// `B = c·e^{γN}`.
    pub c: f64,
    pub gamma: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub points: Vec<(f64, f64)>,
    pub linear: Option<LinearFit>,
    pub exponential: Option<ExponentialFit>,
    pub preferred: Option<ScalingModel>,
    /// Why no preference was given, if so.
    pub note: Option<String>,
}

/// Residual differences within this are ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Fits `B(N)` linearly (least squares in `B`) and exponentially (least
/// squares in `ln B`). Both residuals are sums of squared errors in `ln B`,
/// so the comparison does not favor either growth law's natural scale.
pub fn fit_scaling(points: &[(f64, f64)]) -> ScalingFit {
    let mut out = ScalingFit {
        points: points.to_vec(),
        linear: None,
        exponential: None,
        preferred: None,
        note: None,
    };
    let mut sizes: Vec<f64> = points.iter().map(|p| p.0).collect();
    sizes.sort_by(f64::total_cmp);
    sizes.dedup();
    if points.iter().any(|p| !(p.1 > 0.0 && p.1.is_finite() && p.0.is_finite())) {
        out.note = Some("decay rates must be positive and finite".into());
        return out;
    }
    if sizes.len() < 2 {
        out.note = Some(format!("need at least 3 sizes, got {}", sizes.len()));
        return out;
    }
    let (a, b) = least_squares(points);
    let log_pts: Vec<(f64, f64)> = points.iter().map(|&(n, v)| (n, v.ln())).collect();
    let (gamma, ln_c) = least_squares(&log_pts);
    let log_residual = |pred: &dyn Fn(f64) -> f64| -> f64 {
        points
            .iter()
            .map(|&(n, v)| {
                let p = pred(n);
                if p > 0.0 {
                    (v.ln() - p.ln()).powi(2)
                } else {
                    f64::INFINITY
                }
            })
            .sum()
    };
    let lin = LinearFit {
        a,
        b,
        residual: log_residual(&|n| a * n + b),
    };
    let exp = ExponentialFit {
        c: ln_c.exp(),
        gamma,
        residual: log_residual(&|n| (ln_c + gamma * n).exp()),
    };
    let first = points[0].1;
    if sizes.len() < 3 {
        out.note = Some(format!("need at least 3 sizes, got {}", sizes.len()));
    } else if points.iter().all(|p| p.1 == first) {
        out.note = Some("all decay rates equal".into());
    } else if (lin.residual - exp.residual).abs() <= TIE_TOLERANCE {
        out.note = Some("residuals tie".into());
    } else if lin.residual < exp.residual {
        out.preferred = Some(ScalingModel::Linear);
    } else {
        out.preferred = Some(ScalingModel::Exponential);
    }
    out.linear = Some(lin);
    out.exponential = Some(exp);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Collapse {
    pub alpha: Option<f64>,
    pub score: Option<f64>,
    /// `(α, score)` for every grid point with enough overlap.
    pub scan: Vec<(f64, f64)>,
    pub note: Option<String>,
}

pub const ALPHA_MIN: f64 = 0.5;
pub const ALPHA_MAX: f64 = 2.5;
pub const ALPHA_STEP: f64 = 0.01;

/// Non-decreasing least-squares fit (pool adjacent violators) of `y` in the
/// order given.
fn isotonic(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, w2) = blocks[blocks.len() - 1];
            let (m1, w1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let w = w1 + w2;
            *blocks.last_mut().expect("non-empty") = ((m1 * w1 as f64 + m2 * w2 as f64) / w as f64, w);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, w)| std::iter::repeat_n(m, w))
        .collect()
}

/// Monotone piecewise-linear curve through the isotonic fit of `(x, y)`.
struct MonotoneSpline {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl MonotoneSpline {
    fn fit(points: &[(f64, f64)]) -> Self {
        let mut sorted = points.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let y = isotonic(&sorted.iter().map(|p| p.1).collect::<Vec<_>>());
        Self {
            x: sorted.iter().map(|p| p.0).collect(),
            y,
        }
    }

    fn covers(&self, x: f64) -> bool {
        self.x.len() >= 2 && x >= self.x[0] && x <= self.x[self.x.len() - 1]
    }

    fn at(&self, x: f64) -> f64 {
        let i = self.x.partition_point(|&xi| xi < x).clamp(1, self.x.len() - 1);
        let (x0, x1) = (self.x[i - 1], self.x[i]);
        if x1 == x0 {
            return 0.5 * (self.y[i - 1] + self.y[i]);
        }
        self.y[i - 1] + (self.y[i] - self.y[i - 1]) * (x - x0) / (x1 - x0)
    }
}

/// Fewest cross-curve comparisons for a grid point to count.
const MIN_OVERLAP_PAIRS: usize = 3;

/// Collapse score at one `α`: mean squared deviation of every point from the
/// monotone splines of the other curves that cover it, in
/// `(ln(n_f/N^α), ln(−ln I))` space.
pub fn collapse_score(curves: &[DecayCurve], alpha: f64) -> Option<f64> {
    let sets: Vec<Vec<(f64, f64)>> = curves
        .iter()
        .map(|c| {
            let scale = (c.n as f64).ln() * alpha;
            linearized(c, 0.0)
                .0
                .into_iter()
                .map(|(lx, y)| (lx - scale, y))
                .collect()
        })
        .collect();
    let splines: Vec<MonotoneSpline> = sets.iter().map(|s| MonotoneSpline::fit(s)).collect();
    let (mut sum, mut count) = (0.0, 0);
    for (i, set) in sets.iter().enumerate() {
        for (j, spline) in splines.iter().enumerate() {
            if i == j {
                continue;
            }
            for &(x, y) in set {
                if spline.covers(x) {
                    sum += (y - spline.at(x)).powi(2);
                    count += 1;
                }
            }
        }
    }
    (count >= MIN_OVERLAP_PAIRS).then(|| sum / count as f64)
}

/// Scans `α ∈ [0.5, 2.5]` in steps of 0.01 and returns the best collapse.
/// Ties go to the smaller `α`.
pub fn collapse_alpha(curves: &[DecayCurve]) -> Collapse {
    let usable = curves.iter().filter(|c| linearized(c, 0.0).0.len() >= 2).count();
    if usable < 3 {
        return Collapse {
            alpha: None,
            score: None,
            scan: Vec::new(),
            note: Some(format!("need at least 3 sizes with two usable points, got {usable}")),
        };
    }
    let steps = ((ALPHA_MAX - ALPHA_MIN) / ALPHA_STEP).round() as usize;
    let scan: Vec<(f64, f64)> = (0..=steps)
        .into_par_iter()
        .filter_map(|k| {
            let alpha = ALPHA_MIN + k as f64 * ALPHA_STEP;
            collapse_score(curves, alpha).map(|s| (alpha, s))
        })
        .collect();
    let best = scan
        .iter()
        .copied()
        .reduce(|a, b| if b.1 < a.1 { b } else { a });
    Collapse {
        alpha: best.map(|b| b.0),
        score: best.map(|b| b.1),
        note: best.is_none().then(|| "rescaled curves do not overlap".to_string()),
        scan,
    }
}

/// One optimized point of a decay scan, as written to and read from CSV tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub jx: f64,
    pub transition: String,
    pub n: usize,
    pub n_f: usize,
    pub infidelity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub jx: f64,
    pub transition: String,
    pub n: usize,
    pub fit: Option<DecayFit>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseRow {
    pub jx: f64,
    pub transition: String,
    pub collapse: Collapse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub jx: f64,
    pub transition: String,
    pub fit: ScalingFit,
}

/// `B` of the first transition over `B` of the second at one size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRatio {
    pub jx: f64,
    pub n: usize,
    pub numerator: String,
    pub denominator: String,
    pub ratio: f64,
}

/// Decay fits per curve plus the multi-size quantities derived from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub eta_mode: EtaMode,
    pub fit_floor: f64,
    pub decays: Vec<DecayRow>,
    pub collapse: Vec<CollapseRow>,
    pub scaling: Vec<ScalingRow>,
    pub rate_ratios: Vec<RateRatio>,
    /// Exponential rate at `J_x = 0` over the rate at the first nonzero `J_x`,
    /// for the first transition.
    pub gamma_ratio: Option<f64>,
}

impl FitReport {
    pub fn failed_fits(&self) -> usize {
        self.decays.iter().filter(|d| d.fit.is_none()).count()
    }

    pub fn decay(&self, jx: f64, transition: &str, n: usize) -> Option<&DecayFit> {
        self.decays
            .iter()
            .find(|d| d.jx == jx && d.transition == transition && d.n == n)
            .and_then(|d| d.fit.as_ref())
    }

    /// CSV with columns `jx, transition, n, b, eta, residual, used`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("jx,transition,n,b,eta,residual,used\n");
        for d in &self.decays {
            match &d.fit {
                Some(f) => out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    d.jx, d.transition, d.n, f.b, f.eta, f.residual, f.used
                )),
                None => out.push_str(&format!("{},{},{},,,,0\n", d.jx, d.transition, d.n)),
            }
        }
        out
    }
}

fn drop_floor(curve: &DecayCurve, floor: f64) -> DecayCurve {
    DecayCurve {
        n: curve.n,
        points: curve
            .points
            .iter()
            .filter(|p| p.infidelity > floor)
            .cloned()
            .collect(),
    }
}

/// Groups rows into best-so-far curves by `(jx, transition, n)`, fits each,
/// then collapses sizes and fits `B(N)` per `(jx, transition)`. Rows are
/// sorted by key first, so the report does not depend on row order.
pub fn fit_report(rows: &[CurveRow], eta: EtaMode, floor: f64) -> FitReport {
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| {
        a.jx.total_cmp(&b.jx)
            .then_with(|| a.transition.cmp(&b.transition))
            .then(a.n.cmp(&b.n))
            .then(a.n_f.cmp(&b.n_f))
    });
    rows.dedup_by(|a, b| a.jx == b.jx && a.transition == b.transition && a.n == b.n && a.n_f == b.n_f);

    let mut series: Vec<(f64, String, Vec<DecayCurve>)> = Vec::new();
    for r in &rows {
        let new_series = series
            .last()
            .is_none_or(|s| s.0 != r.jx || s.1 != r.transition);
        if new_series {
            series.push((r.jx, r.transition.clone(), Vec::new()));
        }
        let curves = &mut series.last_mut().expect("pushed").2;
        if curves.last().is_none_or(|c| c.n != r.n) {
            curves.push(DecayCurve::new(r.n, []));
        }
        curves.last_mut().expect("pushed").points.push(DecayPoint {
            n_f: r.n_f,
            infidelity: r.infidelity,
            seeds: 1,
        });
    }

    let mut report = FitReport {
        eta_mode: eta,
        fit_floor: floor,
        decays: Vec::new(),
        collapse: Vec::new(),
        scaling: Vec::new(),
        rate_ratios: Vec::new(),
        gamma_ratio: None,
    };
    for (jx, transition, curves) in &series {
        let best: Vec<DecayCurve> = curves.iter().map(|c| c.best_so_far()).collect();
        let mut b_of_n = Vec::new();
        for c in &best {
            let (fit, error) = match fit_decay_above(c, eta, floor) {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            if let Some(f) = &fit {
                if f.b.is_finite() && f.b > 0.0 {
                    b_of_n.push((c.n as f64, f.b));
                }
            }
            report.decays.push(DecayRow {
                jx: *jx,
                transition: transition.clone(),
                n: c.n,
                fit,
                error,
            });
        }
        if best.len() > 1 {
            let trimmed: Vec<DecayCurve> = best.iter().map(|c| drop_floor(c, floor)).collect();
            report.collapse.push(CollapseRow {
                jx: *jx,
                transition: transition.clone(),
                collapse: collapse_alpha(&trimmed),
            });
        }
        report.scaling.push(ScalingRow {
            jx: *jx,
            transition: transition.clone(),
            fit: fit_scaling(&b_of_n),
        });
    }

    let transitions: Vec<String> = {
        let mut t: Vec<String> = series.iter().map(|s| s.1.clone()).collect();
        t.sort();
        t.dedup();
        t
    };
    if transitions.len() >= 2 {
        let (num, den) = (&transitions[1], &transitions[0]);
        for d in &report.decays {
            if &d.transition != num {
                continue;
            }
            let (Some(a), Some(b)) = (d.fit.as_ref(), report.decay(d.jx, den, d.n)) else {
                continue;
            };
            report.rate_ratios.push(RateRatio {
                jx: d.jx,
                n: d.n,
                numerator: num.clone(),
                denominator: den.clone(),
                ratio: a.b / b.b,
            });
        }
    }

    if let Some(first) = transitions.first() {
        let rate = |pred: &dyn Fn(f64) -> bool| {
            report
                .scaling
                .iter()
                .find(|s| &s.transition == first && pred(s.jx))
                .and_then(|s| s.fit.exponential.as_ref())
                .map(|e| e.gamma)
        };
        if let (Some(g0), Some(g1)) = (rate(&|jx| jx == 0.0), rate(&|jx| jx != 0.0)) {
            report.gamma_ratio = Some(g0 / g1);
        }
    }
    report
}
