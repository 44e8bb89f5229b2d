//! The derivative-free and quasi-Newton searches on the Rosenbrock valley.

use spinrev::search::{minimize, LocalSearch, SearchOptions};

fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2).map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2)).sum()
}

fn main() {
    let opts = SearchOptions {
        max_evaluations: 20_000,
        initial_scale: 0.5,
        tolerance: 1e-14,
        ..Default::default()
    };
    for method in [LocalSearch::NelderMead, LocalSearch::Bfgs] {
        for dim in [2, 4, 6] {
            let r = minimize(method, rosenbrock, &vec![-1.2; dim], &opts);
            println!(
                "{method:?} dim {dim}: f = {:.2e} in {} evaluations (converged: {})",
                r.f, r.evaluations, r.converged
            );
        }
    }
}
