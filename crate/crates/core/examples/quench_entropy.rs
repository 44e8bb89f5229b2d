//! Random quench between two fields and the diagonal entropy it builds up.
//!
//! `cargo run --example quench_entropy -- [N] [seed]`

use spinrev::dynamics::{record_trajectory, Method, Propagator};
use spinrev::models::{critical_gap, ground_state, Model, ModelSpec};
use spinrev::protocols::{random_quench_pulse, QuenchSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(20), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse())?;

    let model = Model::build(&ModelSpec::lmg(n))?;
    let t_max = 100.0 / critical_gap(&model)?;
    let spec = QuenchSpec { seed, ..Default::default() };
    let quench = random_quench_pulse(&spec, t_max, 0.01)?;
    let psi0 = ground_state(&model, spec.gamma1)?.state;

    let mut prop = Propagator::for_model(&model, Method::Auto);
    let (record, _) = record_trajectory(&mut prop, &quench.pulse, &psi0, &psi0, 2000)?;
    println!("LMG N = {n}, {} segments, T = {:.1}", quench.segment_steps.len(), quench.pulse.duration());
    println!("reference ln(N/2 + 1) = {:.4}", (n as f64 / 2.0 + 1.0).ln());
    println!("{:>10} {:>8} {:>10}", "t", "S_d", "1 - F");
    for k in (0..record.len()).step_by((record.len() / 15).max(1)) {
        println!("{:10.1} {:8.4} {:10.3e}", record.times[k], record.entropy[k], record.infidelity[k]);
    }
    Ok(())
}
