//! Exact time reversal of a quench, then the same return with multiplicative
//! field noise of increasing strength.

use spinrev::dynamics::{diagonal_entropy, infidelity, Method, Propagator};
use spinrev::models::{ground_state, Model, ModelSpec};
use spinrev::protocols::{add_noise, random_quench_pulse, time_reversed_pulse, NoiseSpec, QuenchSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = Model::build(&ModelSpec::ising(8))?;
    let spec = QuenchSpec { seed: 3, t_max: Some(10.0), ..Default::default() };
    let forward = random_quench_pulse(&spec, 10.0, 0.01)?.pulse;
    let back = time_reversed_pulse(&forward);

    let psi0 = ground_state(&model, spec.gamma1)?.state;
    let mut prop = Propagator::for_model(&model, Method::Auto);
    let disordered = prop.propagate(&forward, &psi0)?;
    println!(
        "after {:.0} time units: S_d = {:.3}",
        forward.duration(),
        diagonal_entropy(&disordered, &model.pair, spec.gamma1)
    );

    for xi in [0.0, 1e-4, 1e-3, 1e-2, 1e-1] {
        let mut worst: f64 = 0.0;
        for seed in 0..5 {
            let noisy = add_noise(&back, &NoiseSpec::new(xi, seed))?;
            let psi = prop.propagate(&noisy, &disordered)?;
            worst = worst.max(infidelity(&psi, &psi0)?);
        }
        println!("ξ = {xi:7.0e}   worst 1 - F over 5 seeds = {worst:.3e}");
    }
    Ok(())
}
