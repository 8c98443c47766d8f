//! Evolve the 18-level master equation for a bundled scenario and print the
//! detected 393 nm flux, beat-period markers, and the numerical invariants.

use qbeat::master;
use qbeat::scenario::load_scenario_file;
use std::path::Path;

fn main() -> qbeat::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "scenarios/lambda_fig3.toml".to_string());
    let sc = load_scenario_file(Path::new(&path))?.to_scenario()?;

    let evo = master::evolve(&sc)?;
    let flux = master::detection_flux(&sc, &evo)?;
    let nu = sc.initial.beat_frequency_mhz(&sc.zeeman).abs();

    println!("scenario {path}");
    println!("beat frequency {nu:.4} MHz, expected period {:.2} ns", 1e3 / nu);
    println!();
    println!("{:>8}  {:>12}  flux", "t_ns", "per_ns");
    let peak = flux.iter().cloned().fold(0.0, f64::max);
    // one line per ~5 ns over the first two periods
    let stride = (5.0 / sc.grid.step_ns).round().max(1.0) as usize;
    let until = 60.0 + 2e3 / nu;
    for (i, (t, f)) in evo.times.iter().zip(&flux).enumerate() {
        if *t > until {
            break;
        }
        if i % stride != 0 {
            continue;
        }
        let bar = "#".repeat((f / peak * 50.0).round() as usize);
        println!("{t:8.1}  {f:12.3e}  {bar}");
    }

    let inv = evo.worst_invariants();
    println!();
    println!("trace deviation   {:.2e}", inv.trace_deviation);
    println!("hermiticity error {:.2e}", inv.hermiticity);
    println!("min eigenvalue    {:+.2e}", inv.min_eigenvalue);
    Ok(())
}
