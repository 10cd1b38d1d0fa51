//! Round-trips a dataset through the IDX and CSV formats, then trains on the
//! reloaded copy.

use std::fs;
use std::sync::Arc;

use deam::data::{gen_blobs, load_csv, load_idx, write_idx};
use deam::harness::run;
use deam::objectives::LogisticRegressionObjective;
use deam::{DeamHyperparams, Experiment, ExperimentConfig, Objective, OptimizerSpec, ParamVector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("deam-datasets-{}", std::process::id()));
    fs::create_dir_all(&dir)?;

    // 16 features become 4x4 "images"; features must lie in [0, 1] to survive
    // the byte encoding, so rescale the blobs first.
    let blobs = gen_blobs(500, 16, 3, 4.0, 1)?;
    let (lo, hi) = blobs
        .features()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    let scaled: Vec<f64> = blobs
        .features()
        .iter()
        .map(|x| (x - lo) / (hi - lo))
        .collect();
    let blobs = deam::Dataset::new("blobs", scaled, blobs.labels().to_vec(), 16, 3)?;

    let (images, labels) = (dir.join("images.idx3"), dir.join("labels.idx1"));
    write_idx(&blobs, 4, 4, &images, &labels)?;
    let from_idx = load_idx(&images, &labels, None)?;
    println!(
        "idx: {} samples, {} features, {} classes",
        from_idx.len(),
        from_idx.dim(),
        from_idx.classes()
    );

    let mut csv = String::from("f0,f1,label\n");
    for i in 0..5 {
        csv.push_str(&format!(
            "{},{},{}\n",
            from_idx.row(i)[0],
            from_idx.row(i)[1],
            from_idx.label(i)
        ));
    }
    let csv_path = dir.join("head.csv");
    fs::write(&csv_path, csv)?;
    let from_csv = load_csv(&csv_path, "label")?;
    println!(
        "csv: {} samples, {} features",
        from_csv.len(),
        from_csv.dim()
    );

    let objective = Arc::new(LogisticRegressionObjective::new(Arc::new(from_idx)));
    let mut cfg = ExperimentConfig::new(
        "deam",
        OptimizerSpec::Deam(DeamHyperparams::default()),
        0.05,
        500,
    );
    cfg.batch_size = Some(50);
    let trace = run(&Experiment::new(
        objective.clone(),
        ParamVector::zeros(objective.dim()),
        cfg,
    ))?;
    println!(
        "trained {} steps on the IDX copy, final loss {:.4}",
        trace.steps, trace.final_loss
    );

    fs::remove_dir_all(&dir)?;
    Ok(())
}
