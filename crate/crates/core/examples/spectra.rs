//! Low-lying spectra of the three models across the transverse field.
//!
//! Run with `cargo run --example spectra`.

use spinrev::models::{critical_gap, diagonalize, Model, ModelSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let specs = [
        ModelSpec::ising(8),
        ModelSpec::ising_longitudinal(8, 0.5),
        ModelSpec::lmg(16),
    ];
    for spec in &specs {
        let model = Model::build(spec)?;
        // The gap reference is only defined for the integrable kinds.
        let gap = critical_gap(&model).map_or("n/a".to_string(), |g| format!("{g:.4}"));
        println!("{:?} N = {}: dimension {}, critical gap {gap}", spec.kind, spec.n, model.dimension());
        for gamma in [0.0, 0.5, 1.0, 2.0, 10.0] {
            let s = diagonalize(&model.pair, gamma);
            let low: Vec<String> = s.values.iter().take(4).map(|e| format!("{e:9.4}")).collect();
            println!("  Γ = {gamma:5.1}  {}", low.join(" "));
        }
    }
    Ok(())
}
