//! A one-hidden-layer ReLU network on Gaussian blobs, trained with DEAM and
//! heavy-ball SGD, printing the loss curve.

use std::sync::Arc;

use deam::data::gen_blobs;
use deam::harness::run;
use deam::objectives::MlpObjective;
use deam::{BaselineConfig, DeamHyperparams, Experiment, ExperimentConfig, OptimizerSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Arc::new(gen_blobs(2000, 20, 4, 3.0, 11)?);
    let mlp = Arc::new(MlpObjective::new(data, 32)?);
    let initial = mlp.init_params(11);

    for spec in [
        OptimizerSpec::Deam(DeamHyperparams::default()),
        OptimizerSpec::Baseline(BaselineConfig::sgd_momentum()),
    ] {
        let mut cfg = ExperimentConfig::new(spec.name(), spec, 0.005, 2000);
        cfg.batch_size = Some(64);
        cfg.eval_every = 250;
        cfg.seed = 11;
        let trace = run(&Experiment::new(mlp.clone(), initial.clone(), cfg))?;
        println!("{}", trace.label);
        for r in &trace.records {
            println!("  step {:>5}  batch loss {:.4}", r.t, r.train_loss);
        }
        println!("  final full-batch loss {:.4}", trace.final_loss);
    }
    Ok(())
}
