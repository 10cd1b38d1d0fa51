//! Six optimizers on softmax regression over Gaussian blobs, run in parallel
//! and tabulated.

use std::sync::Arc;

use deam::data::gen_blobs;
use deam::harness::{compare, Metric};
use deam::objectives::LogisticRegressionObjective;
use deam::{
    BaselineConfig, DeamHyperparams, Experiment, ExperimentConfig, Objective, OptimizerSpec,
    ParamVector,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Arc::new(gen_blobs(2000, 20, 4, 4.0, 7)?);
    let objective = Arc::new(LogisticRegressionObjective::new(data));
    let initial = ParamVector::zeros(objective.dim());

    let specs = [
        OptimizerSpec::Deam(DeamHyperparams::default()),
        OptimizerSpec::Baseline(BaselineConfig::adam()),
        OptimizerSpec::Baseline(BaselineConfig::amsgrad()),
        OptimizerSpec::Baseline(BaselineConfig::rmsprop()),
        OptimizerSpec::Baseline(BaselineConfig::adagrad()),
        OptimizerSpec::Baseline(BaselineConfig::Sgd),
    ];
    let experiments: Vec<Experiment> = specs
        .iter()
        .map(|spec| {
            let mut cfg = ExperimentConfig::new(spec.name(), *spec, 0.01, 3000);
            cfg.batch_size = Some(128);
            cfg.eval_every = 100;
            cfg.seed = 7;
            Experiment::new(objective.clone(), initial.clone(), cfg)
        })
        .collect();

    let table = compare(&experiments, Metric::StepsToThreshold(0.2), true)?;
    print!("{}", table.to_text());
    println!();
    print!("{}", table.to_csv());
    Ok(())
}
