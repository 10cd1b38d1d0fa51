//! The zig-zag example: Adam with beta1 = 0.9 and 0.0, and DEAM, on
//! f(x, y) = x^2 + 4y^2 from (-4, -1) with eta = 1.
//!
//! Prints the first points of each route and writes the full routes as CSV
//! (`label,t,x,y`) to the path given as the first argument, if any.

use std::fmt::Write as _;

use deam::cli::counterexample_experiments;
use deam::harness::{compare, Metric};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let table = compare(
        &counterexample_experiments(200),
        Metric::StepsToThreshold(1e-2),
        false,
    )?;
    let mut csv = String::from("label,t,x,y\n");
    for trace in table.traces.iter().flatten() {
        let route: Vec<(u64, f64, f64)> = trace
            .records
            .iter()
            .map(|r| {
                let w = r.w.as_ref().expect("snapshots are on");
                (r.t, w[0], w[1])
            })
            .collect();
        println!(
            "{} (first f < 1e-2 at step {:?})",
            trace.label,
            trace.first_hit(1e-2)
        );
        for (t, x, y) in route.iter().take(6) {
            println!("  w{} = ({x:+.6}, {y:+.6})", t - 1);
        }
        for (t, x, y) in &route {
            writeln!(csv, "{},{},{x},{y}", trace.label, t - 1)?;
        }
    }
    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, csv)?;
        println!("wrote {path}");
    }
    Ok(())
}
