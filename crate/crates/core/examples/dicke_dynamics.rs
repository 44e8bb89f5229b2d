//! LMG dynamics in the symmetric Dicke multiplet: `N + 1` spins cost a
//! `N/2 + 1` dimensional space in the even-parity block.

use spinrev::dynamics::{diagonal_entropy, Method, Propagator, Pulse};
use spinrev::models::{ground_state, BasisLabel, Model, ModelSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for n in [10, 40, 200] {
        let model = Model::build(&ModelSpec::lmg(n))?;
        let labels: Vec<i64> = model
            .basis
            .labels
            .iter()
            .take(3)
            .filter_map(|l| match l {
                BasisLabel::Dicke { twice_sz } => Some(*twice_sz),
                _ => None,
            })
            .collect();
        let psi0 = ground_state(&model, 10.0)?.state;
        let pulse = Pulse::from_fn(20.0, 0.01, |t| 10.0 * (-t / 4.0).exp());
        let mut prop = Propagator::for_model(&model, Method::Split);
        let psi = prop.propagate(&pulse, &psi0)?;
        println!(
            "N = {n:3}: dimension {:3}, first 2S_z {:?}, S_d after ramp-down {:.4}",
            model.dimension(),
            labels,
            diagonal_entropy(&psi, &model.pair, 0.0)
        );
    }
    Ok(())
}
