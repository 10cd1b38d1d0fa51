//! Cumulative regret of DEAM and AMSGrad on a convex quadratic, under both
//! learning-rate schedules.

use std::sync::Arc;

use deam::harness::{compute_regret, run};
use deam::objectives::QuadraticObjective;
use deam::{
    BaselineConfig, DeamHyperparams, Experiment, ExperimentConfig, OptimizerSpec, Schedule,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let objective = Arc::new(QuadraticObjective::new([1.0, 4.0].into())?);
    let checkpoints = [10, 100, 200, 500, 1000, 2000];
    let specs = [
        OptimizerSpec::Deam(DeamHyperparams::default()),
        OptimizerSpec::Baseline(BaselineConfig::amsgrad()),
    ];
    for spec in specs {
        for schedule in [Schedule::Constant, Schedule::InverseSqrt] {
            let mut cfg = ExperimentConfig::new(spec.name(), spec, 0.1, 2000);
            cfg.schedule = schedule;
            cfg.snapshot = true;
            let trace = run(&Experiment::new(
                objective.clone(),
                [-4.0, -1.0].into(),
                cfg,
            ))?;
            let report = compute_regret(&trace, objective.as_ref(), &checkpoints)?;
            println!(
                "{} ({schedule:?}): R(T) = {:.4}",
                spec.name(),
                report.regret_total
            );
            for (t, avg) in &report.regret_over_t {
                println!("  R({t})/{t} = {avg:.6}");
            }
        }
    }
    Ok(())
}
