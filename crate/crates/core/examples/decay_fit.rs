//! Stretched-exponential fits, the size collapse exponent and the linear vs
//! exponential growth of the decay scale, on synthetic curves.

use spinrev::analysis::{collapse_alpha, fit_decay, fit_scaling, DecayCurve, EtaMode};

fn curve(n: usize, b: f64, eta: f64) -> DecayCurve {
    DecayCurve::new(n, (1..=3 * b as usize).map(|n_f| (n_f, (-(n_f as f64 / b).powf(eta)).exp())))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // B = 0.4·N^1.2 should collapse at α = 1.2.
    let curves: Vec<DecayCurve> = [10, 20, 40]
        .into_iter()
        .map(|n| curve(n, 0.4 * (n as f64).powf(1.2), 3.0))
        .collect();
    let mut points = Vec::new();
    for c in &curves {
        let fit = fit_decay(c, EtaMode::Free)?;
        println!("N = {:2}: B = {:6.3}  η = {:.3}  residual {:.1e}", c.n, fit.b, fit.eta, fit.residual);
        points.push((c.n as f64, fit.b));
    }
    let collapse = collapse_alpha(&curves);
    println!("collapse α = {:?}", collapse.alpha);

    for (label, law) in [("linear", (|n: f64| 1.5 * n + 2.0) as fn(f64) -> f64), ("exponential", |n: f64| 0.8 * (0.35 * n).exp())] {
        let pts: Vec<(f64, f64)> = [4.0, 6.0, 8.0, 10.0].into_iter().map(|n| (n, law(n))).collect();
        let s = fit_scaling(&pts);
        println!("{label} data: preferred {:?}", s.preferred);
    }
    Ok(())
}
