//! Short-pulse phase control: when the emitted packet is much shorter than
//! the beat period, the total detected flux follows the prepared phase.

use qbeat::fit::{fit_sinusoid, sinusoid_visibility};
use qbeat::master::{phase_scan, PhaseScanMode};
use qbeat::scenario::load_scenario_file;
use std::f64::consts::TAU;
use std::path::Path;

fn main() -> qbeat::Result<()> {
    for name in ["scenarios/lambda_fig7a.toml", "scenarios/v_fig7b.toml"] {
        let file = load_scenario_file(Path::new(name))?;
        let sc = file.to_scenario()?;
        let phis: Vec<f64> = (0..12).map(|k| k as f64 / 12.0 * TAU).collect();
        let curve = phase_scan(&sc, &phis, PhaseScanMode::IntegratedFlux)?;

        let peak = curve.y.iter().cloned().fold(0.0, f64::max);
        println!("{name}");
        for (phi, y) in curve.x.iter().zip(&curve.y) {
            let bar = "#".repeat((y / peak * 40.0).round() as usize);
            println!("  {:6.1} deg  {bar}", phi.to_degrees());
        }
        let fit = fit_sinusoid(&curve.x, &curve.y)?;
        let (vis, ratio) = sinusoid_visibility(&fit);
        println!("  visibility {vis:.3}, max/min ratio {ratio:.2}");
        println!();
    }
    Ok(())
}
