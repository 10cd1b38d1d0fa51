//! Drives the CLI layer from code: parse a TOML experiment, run it, and
//! write the same files `deam compare` would.

use std::path::Path;

use deam::cli::{parse_config, CommonArgs};
use deam::harness::compare;

const CONFIG: &str = r#"
[objective]
kind = "rosenbrock"

[[optimizer]]
kind = "deam"

[[optimizer]]
kind = "adam"
label = "adam-no-momentum"
beta1 = 0.0

[run]
eta = 0.01
max_steps = 5000
eval_every = 100

[compare]
metric = "steps_to_threshold"
threshold = 1e-3
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let setup = parse_config(CONFIG, Path::new("."), &CommonArgs::default())?;
    let table = compare(&setup.experiments(), setup.metric, true)?;
    print!("{}", table.to_text());

    let out = std::env::temp_dir().join("deam-config-run");
    std::fs::create_dir_all(&out)?;
    let cfg_path = out.join("rosenbrock.toml");
    std::fs::write(&cfg_path, CONFIG)?;
    deam::cli::cmd_compare(&CommonArgs {
        config: Some(cfg_path),
        out: out.clone(),
        seed: None,
        steps: None,
    })?;
    println!("wrote {}", out.join("comparison.csv").display());
    Ok(())
}
