//! Steps DEAM by hand on f(x, y) = x^2 + 4y^2 and prints the per-step
//! diagnostics: the angle, the momentum weight, and the backtrack term.

use deam::objectives::{Objective, QuadraticObjective};
use deam::{Batch, DeamHyperparams, DeamState, ParamVector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let objective = QuadraticObjective::counterexample();
    let mut state = DeamState::new(2, DeamHyperparams::default())?;
    let mut w: ParamVector = [-4.0, -1.0].into();

    println!(
        "{:>3} {:>10} {:>10} {:>8} {:>8} {:>8} {:>12}",
        "t", "x", "y", "theta", "beta1", "d", "f"
    );
    for _ in 0..12 {
        let (loss, grad) = objective.eval(&w, &Batch::Full)?;
        let diag = state.step(&mut w, &grad, 0.1)?;
        println!(
            "{:>3} {:>10.5} {:>10.5} {:>8.4} {:>8.4} {:>8.4} {:>12.6}",
            state.t(),
            w[0],
            w[1],
            diag.theta,
            diag.beta1_t,
            diag.d_t,
            loss
        );
    }
    println!("m = {:?}", state.m().as_slice());
    println!("v_hat = {:?}", state.v_hat().as_slice());
    Ok(())
}
