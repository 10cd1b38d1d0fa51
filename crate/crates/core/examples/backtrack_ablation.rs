//! DEAM with each backtrack variant on the same quadratic, plus the shape of
//! each variant as a function of the angle.

use std::f64::consts::PI;
use std::sync::Arc;

use deam::harness::{compare, Metric};
use deam::objectives::QuadraticObjective;
use deam::optimizers::deam_backtrack;
use deam::{BacktrackVariant, DeamHyperparams, Experiment, ExperimentConfig, OptimizerSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    print!("{:>8}", "theta");
    for v in BacktrackVariant::ALL {
        print!(" {:>15}", v.as_str());
    }
    println!();
    for k in 0..=8 {
        let theta = PI * k as f64 / 8.0;
        print!("{theta:>8.4}");
        for v in BacktrackVariant::ALL {
            print!(" {:>15.5}", deam_backtrack(theta, v)?);
        }
        println!();
    }
    println!();

    let objective = Arc::new(QuadraticObjective::new([1.0, 4.0].into())?);
    let experiments: Vec<Experiment> = BacktrackVariant::ALL
        .iter()
        .map(|&v| {
            let spec = OptimizerSpec::Deam(DeamHyperparams::default().with_backtrack(v));
            let cfg = ExperimentConfig::new(format!("deam-{v}"), spec, 0.1, 2000);
            Experiment::new(objective.clone(), [-4.0, -1.0].into(), cfg)
        })
        .collect();
    let table = compare(&experiments, Metric::StepsToThreshold(1e-4), true)?;
    print!("{}", table.to_text());
    Ok(())
}
