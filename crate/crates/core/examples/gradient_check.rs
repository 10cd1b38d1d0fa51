//! Analytic gradients against central finite differences for every objective.

use std::sync::Arc;

use deam::data::gen_blobs;
use deam::objectives::{
    gradcheck, LogisticRegressionObjective, MlpObjective, QuadraticObjective, Rosenbrock,
};
use deam::{Batch, Objective, ParamVector, Rng};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = Rng::new(3);
    let data = Arc::new(gen_blobs(300, 6, 3, 3.0, 3)?);
    let batch = Batch::Indices((0..32).map(|_| rng.index(data.len())).collect());

    let quadratic = QuadraticObjective::new([1.0, 4.0, 0.25].into())?;
    let logreg = LogisticRegressionObjective::new(data.clone());
    let mlp = MlpObjective::new(data, 10)?;

    let cases: Vec<(&dyn Objective, ParamVector, Batch)> = vec![
        (&quadratic, rng.uniform_vector(3, -5.0, 5.0), Batch::Full),
        (&Rosenbrock, [-1.2, 1.0].into(), Batch::Full),
        (&logreg, rng.normal_vector(logreg.dim(), 0.5), batch.clone()),
        (&mlp, mlp.init_params(11), batch.clone()),
    ];
    for (objective, w, batch) in cases {
        let err = gradcheck(objective, &w, &batch, 1e-5)?;
        println!(
            "{:<46} dim {:>4}  max relative error {err:.3e}",
            objective.name(),
            w.len()
        );
    }
    println!(
        "mlp: smallest |pre-activation| on the batch {:.3e}",
        mlp.min_abs_preactivation(&mlp.init_params(11), &batch)?
    );
    Ok(())
}
