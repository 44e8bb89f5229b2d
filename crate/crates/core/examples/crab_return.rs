//! Steers a disordered LMG state back to the ground state with a CRAB
//! correction on top of a linear ramp.

use spinrev::crab::{optimize, CrabProblem, OptimizerConfig};
use spinrev::dynamics::{diagonal_entropy, Method, Propagator};
use spinrev::models::{ground_state, Model, ModelSpec};
use spinrev::protocols::{linear_ramp, random_quench_pulse, QuenchSpec};
use spinrev::search::LocalSearch;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 12;
    let model = Model::build(&ModelSpec::lmg(n))?;
    let psi_gs = ground_state(&model, 10.0)?.state;
    let quench = random_quench_pulse(&QuenchSpec { seed: 2, t_max: Some(20.0), ..Default::default() }, 20.0, 0.01)?;
    let mut prop = Propagator::for_model(&model, Method::Auto);
    let start = prop.propagate(&quench.pulse, &psi_gs)?;
    println!("start: S_d = {:.3}", diagonal_entropy(&start, &model.pair, 10.0));

    let guess = linear_ramp(0.5, 10.0, 50.0, 0.01);
    let problem = CrabProblem::new(prop, start, psi_gs, guess.clone())?;
    let config = OptimizerConfig {
        local_search: LocalSearch::Bfgs,
        simplex_scale: 1.0,
        n_restarts: 3,
        max_evaluations: 600,
        seed: 7,
        ..Default::default()
    };
    for n_f in [2, 4, 6, 8] {
        let report = optimize(&problem, n_f, &config)?;
        println!(
            "n_f = {n_f}: 1 - F = {:.3e} after {} evaluations",
            report.best_infidelity, report.evaluations
        );
        if n_f == 8 {
            let control = report.control(&guess)?;
            for t in [0.0, 12.5, 25.0, 37.5, 50.0] {
                println!("  Γ({t:4.1}) = {:8.4}", control.field_at(t));
            }
        }
    }
    Ok(())
}
