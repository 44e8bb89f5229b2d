//! Local minimizers for the CRAB objective: a Nelder–Mead simplex with
//! dimension-adaptive coefficients, and BFGS on central-difference gradients.
//!
//! Both count every objective call against one budget and record the best
//! value seen after each call.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalSearch {
    #[default]
    NelderMead,
    Bfgs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOptions {
    pub max_evaluations: usize,
    /// Simplex edge length, or the length of the first BFGS step.
    pub initial_scale: f64,
    /// Nelder–Mead: stop once `f_max − f_min` over the simplex is below this.
    /// BFGS: stop after two iterations that each gain less than this.
    pub tolerance: f64,
    /// Stop as soon as any evaluation reaches this value.
    pub target: f64,
    /// Central-difference step for BFGS gradients.
    pub fd_step: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            max_evaluations: 2000,
            initial_scale: 0.1,
            tolerance: 1e-8,
            target: f64::NEG_INFINITY,
            fd_step: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    /// Tolerance or target met before the budget ran out.
    pub converged: bool,
    /// Best value seen after each evaluation.
    pub history: Vec<f64>,
}

pub fn minimize<F>(method: LocalSearch, f: F, x0: &[f64], opts: &SearchOptions) -> SearchResult
where
    F: FnMut(&[f64]) -> f64,
{
    match method {
        LocalSearch::NelderMead => nelder_mead(f, x0, opts),
        LocalSearch::Bfgs => bfgs(f, x0, opts),
    }
}

struct Counted<F> {
    f: F,
    best: f64,
    best_x: Vec<f64>,
    history: Vec<f64>,
    budget: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn new(f: F, x0: &[f64], budget: usize) -> Self {
        Self {
            f,
            best: f64::INFINITY,
            best_x: x0.to_vec(),
            history: Vec::new(),
            budget: budget.max(1),
        }
    }

    fn eval(&mut self, x: &[f64]) -> f64 {
        let v = (self.f)(x);
        self.record(x, v)
    }

    /// Counts a value computed elsewhere.
    fn record(&mut self, x: &[f64], mut v: f64) -> f64 {
        if v.is_nan() {
            v = f64::INFINITY;
        }
        if v < self.best || self.history.is_empty() {
            self.best = v;
            self.best_x = x.to_vec();
        }
        self.history.push(self.best);
        v
    }

    fn count(&self) -> usize {
        self.history.len()
    }

    fn left(&self) -> usize {
        self.budget.saturating_sub(self.count())
    }

    fn finish(self, converged: bool) -> SearchResult {
        SearchResult {
            x: self.best_x,
            f: self.best,
            evaluations: self.history.len(),
            converged,
            history: self.history,
        }
    }
}

/// Nelder–Mead with reflection, expansion, contraction and shrink factors
/// `1, 1 + 2/n, 0.75 − 1/(2n), 1 − 1/n`.
pub fn nelder_mead<F>(f: F, x0: &[f64], opts: &SearchOptions) -> SearchResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut obj = Counted::new(f, x0, opts.max_evaluations);

    let f0 = obj.eval(x0);
    if n == 0 || f0 <= opts.target {
        return obj.finish(true);
    }

    let nf = n as f64;
    let (alpha, beta, gamma, delta) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);

    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f0)];
    for i in 0..n {
        if obj.left() == 0 {
            return obj.finish(false);
        }
        let mut x = x0.to_vec();
        x[i] += opts.initial_scale;
        let fx = obj.eval(&x);
        if fx <= opts.target {
            return obj.finish(true);
        }
        simplex.push((x, fx));
    }

    let mut centroid = vec![0.0; n];
    let point = |c: &[f64], w: &[f64], t: f64| -> Vec<f64> {
        c.iter().zip(w).map(|(ci, wi)| ci + t * (wi - ci)).collect()
    };

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        if simplex[0].1 <= opts.target || spread <= opts.tolerance {
            return obj.finish(true);
        }
        if obj.left() == 0 {
            return obj.finish(false);
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / nf;
            }
        }
        let worst = simplex[n].0.clone();
        let f_worst = simplex[n].1;
        let f_best = simplex[0].1;
        let f_second = simplex[n - 1].1;

        let xr = point(&centroid, &worst, -alpha);
        let fr = obj.eval(&xr);
        if fr < f_best {
            if obj.left() == 0 {
                simplex[n] = (xr, fr);
                continue;
            }
            let xe = point(&centroid, &worst, -alpha * beta);
            let fe = obj.eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < f_second {
            simplex[n] = (xr, fr);
            continue;
        }
        if obj.left() == 0 {
            continue;
        }
        // Outside or inside contraction.
        let t = if fr < f_worst { -alpha * gamma } else { gamma };
        let xc = point(&centroid, &worst, t);
        let fc = obj.eval(&xc);
        if fc < fr.min(f_worst) {
            simplex[n] = (xc, fc);
            continue;
        }
        // Shrink toward the best vertex.
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            if obj.left() == 0 {
                break;
            }
            let x = point(&best, &vertex.0, delta);
            let fx = obj.eval(&x);
            *vertex = (x, fx);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS on central-difference gradients with a backtracking Armijo line
/// search. The inverse-Hessian estimate is reset to a scaled identity when a
/// search direction fails.
pub fn bfgs<F>(f: F, x0: &[f64], opts: &SearchOptions) -> SearchResult
where
    F: FnMut(&[f64]) -> f64,
{
    bfgs_with_gradient(f, |_: &[f64]| None, x0, opts)
}

/// As [`bfgs`], taking gradients from `grad` when it returns
/// `Some((f(x), ∇f(x)))`; each such call counts as one evaluation. Falls
/// back to central differences when it returns `None`.
pub fn bfgs_with_gradient<F, G>(f: F, mut grad: G, x0: &[f64], opts: &SearchOptions) -> SearchResult
where
    F: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut obj = Counted::new(f, x0, opts.max_evaluations);
    let mut x = x0.to_vec();
    let mut fx = obj.eval(&x);
    if n == 0 || fx <= opts.target {
        return obj.finish(true);
    }
    let h = opts.fd_step;

    let mut gradient = |obj: &mut Counted<F>, x: &[f64]| -> Option<Vec<f64>> {
        if obj.left() == 0 {
            return None;
        }
        if let Some((v, g)) = grad(x) {
            obj.record(x, v);
            return Some(g);
        }
        if obj.left() < 2 * x.len() {
            return None;
        }
        let mut y = x.to_vec();
        let mut g = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            y[i] = x[i] + h;
            let plus = obj.eval(&y);
            y[i] = x[i] - h;
            let minus = obj.eval(&y);
            y[i] = x[i];
            g.push((plus - minus) / (2.0 * h));
        }
        Some(g)
    };

    let Some(mut g) = gradient(&mut obj, &x) else {
        return obj.finish(false);
    };
    // Inverse Hessian, row-major; `None` means a scaled identity.
    let mut hinv: Option<Vec<f64>> = None;
    let mut identity_scale = opts.initial_scale / dot(&g, &g).sqrt().max(f64::MIN_POSITIVE);
    let mut small_gains = 0;

    loop {
        if obj.best <= opts.target {
            return obj.finish(true);
        }
        let p: Vec<f64> = match &hinv {
            Some(m) => (0..n).map(|i| -dot(&m[i * n..(i + 1) * n], &g)).collect(),
            None => g.iter().map(|gi| -identity_scale * gi).collect(),
        };
        let slope = dot(&g, &p);
        if slope >= 0.0 || slope.is_nan() {
            if hinv.is_none() {
                // Zero gradient: nothing left to follow.
                return obj.finish(true);
            }
            hinv = None;
            continue;
        }

        let mut step = 1.0;
        let accepted = loop {
            if obj.left() == 0 {
                return obj.finish(false);
            }
            let xn: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + step * pi).collect();
            let fnew = obj.eval(&xn);
            if fnew <= opts.target {
                return obj.finish(true);
            }
            if fnew <= fx + 1e-4 * step * slope {
                break Some((xn, fnew));
            }
            step *= 0.5;
            if step < 1e-10 {
                break None;
            }
        };
        let Some((xn, fnew)) = accepted else {
            if hinv.is_none() {
                // Even steepest descent failed at this resolution.
                return obj.finish(true);
            }
            hinv = None;
            continue;
        };

        let gain = fx - fnew;
        small_gains = if gain < opts.tolerance { small_gains + 1 } else { 0 };
        if small_gains >= 2 {
            return obj.finish(true);
        }
        let Some(gn) = gradient(&mut obj, &xn) else {
            return obj.finish(false);
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            let m = hinv.get_or_insert_with(|| {
                // Start from the identity scaled by the observed curvature.
                let scale = sy / dot(&y, &y);
                let mut m = vec![0.0; n * n];
                (0..n).for_each(|i| m[i * n + i] = scale);
                m
            });
            let hy: Vec<f64> = (0..n).map(|i| dot(&m[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            let a = (sy + yhy) / (sy * sy);
            for i in 0..n {
                for j in 0..n {
                    m[i * n + j] += a * s[i] * s[j] - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        } else if hinv.is_none() {
            identity_scale = (dot(&s, &s) / dot(&y, &y).max(f64::MIN_POSITIVE)).sqrt();
        }
        x = xn;
        fx = fnew;
        g = gn;
    }
}
