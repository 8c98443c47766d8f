//! Population left in D5/2 after an 854 nm pulse of increasing length.
//! The lambda scheme pauses while the superposition cycles through its
//! dark phase; the V scheme has no dark phase and drains smoothly.

use qbeat::master::depletion_scan;
use qbeat::scenario::load_scenario_file;
use std::path::Path;

fn main() -> qbeat::Result<()> {
    let lambda = load_scenario_file(Path::new("scenarios/lambda_fig8.toml"))?.to_scenario()?;
    let v = load_scenario_file(Path::new("scenarios/v_fig9.toml"))?.to_scenario()?;

    let lengths: Vec<f64> = (0..=24).map(|k| k as f64 * 12.5).collect();
    let stairs = depletion_scan(&lambda, &lengths)?;
    let smooth = depletion_scan(&v, &lengths)?;

    println!("{:>9}  {:>8}  {:>8}", "pulse_ns", "lambda", "V");
    for ((len, a), b) in stairs.x.iter().zip(&stairs.y).zip(&smooth.y) {
        let bar_a = "#".repeat((a * 40.0).round() as usize);
        println!("{len:9.1}  {a:8.4}  {b:8.4}  {bar_a}");
    }
    Ok(())
}
