//! End-to-end file pipeline: simulate the beat curve, sample clicks into a
//! QBTT stream, histogram it, fit the beat, and cross-check the fit against
//! the histogram — the same path the `qbeat` binary takes. Uses a compact
//! inline scenario so the whole run stays under a few seconds; point it at
//! any file under `scenarios/` for the full-size versions.

use qbeat::pipeline::{compare, run_scenario, Command, RunOptions};
use std::fs;

const SCENARIO: &str = r#"
[zeeman]
b_gauss = 2.798

[initial_state]
scheme = "lambda"

[drive_854]
rabi_mhz = 18.0
pulse_ns = 320.0
rise_ns = 40.0

[detection]
numerical_aperture = 0.6
analyzer = "H"
efficiency = 1.0

[run]
t_max_ns = 360.0
step_ns = 0.5
bin_ns = 2.0
seed = 11
n_triggers = 40000
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("qbeat_figure_pipeline");
    fs::create_dir_all(&out)?;
    let scenario = out.join("demo.toml");
    fs::write(&scenario, SCENARIO)?;
    let opts = RunOptions::new(&out);

    for cmd in [Command::Beat, Command::Sample, Command::Hist, Command::Fit] {
        println!("== {} ==", cmd.label());
        for path in run_scenario(&scenario, cmd, &opts)? {
            println!("  wrote {}", path.display());
        }
    }

    // The fit covers only the settled window after the drive ramp, so slice
    // the histogram to the window recorded in the fit report before asking
    // how well the model describes the counts.
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("demo_fit.json"))?)?;
    let (t0, t1) = (
        report["window"]["t_start_ns"].as_f64().unwrap(),
        report["window"]["t_end_ns"].as_f64().unwrap(),
    );
    let hist = fs::read_to_string(out.join("demo_hist.csv"))?;
    let mut sliced = String::from("t_ns,counts\n");
    for line in hist.lines().skip(1) {
        let t: f64 = line.split(',').next().unwrap().parse()?;
        if t > t0 && t < t1 {
            sliced.push_str(line);
            sliced.push('\n');
        }
    }
    let window_csv = out.join("demo_hist_window.csv");
    fs::write(&window_csv, sliced)?;

    let cmp = compare(&window_csv, &out.join("demo_fit.json"))?;
    println!(
        "compare: reduced chi2 {:.2} over {} bins, worst miss {:.1} counts at t = {:.0} ns",
        cmp.reduced_chi2, cmp.n_points, cmp.max_abs_deviation, cmp.at_t_ns
    );
    Ok(())
}
