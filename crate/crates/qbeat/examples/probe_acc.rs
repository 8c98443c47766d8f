use qbeat::amplitude::wrap_angle;
use qbeat::fit;
use qbeat::master::{self, Scenario};
use qbeat::scenario::load_scenario_file;
use std::f64::consts::{PI, TAU};

fn hann_demod(t: &[f64], f: &[f64], nu: f64, t0: f64, periods: f64) -> (f64, f64) {
    let span = periods * 1e3 / nu;
    let (mut re, mut im, mut dc) = (0.0, 0.0, 0.0);
    for (&ti, &fi) in t.iter().zip(f) {
        if ti >= t0 && ti < t0 + span {
            let h = (PI * (ti - t0) / span).sin().powi(2);
            let w = 1e-3 * TAU * nu * ti;
            re += h * fi * w.cos();
            im += h * fi * w.sin();
            dc += h * fi;
        }
    }
    ((-im).atan2(re), 2.0 * re.hypot(im) / dc)
}

fn flux_of(sc: &Scenario) -> (Vec<f64>, Vec<f64>) {
    let evo = master::evolve(sc).unwrap();
    let f = master::detection_flux(sc, &evo).unwrap();
    (evo.times.clone(), f)
}

fn flip_deg(pa: f64, pb: f64) -> f64 {
    let mut d = wrap_angle(pb - pa).to_degrees();
    if d < 0.0 {
        d += 360.0;
    }
    d
}

fn main() {
    let fig3 = load_scenario_file("scenarios/lambda_fig3.toml".as_ref())
        .unwrap()
        .to_scenario()
        .unwrap();
    let fig4a = load_scenario_file("scenarios/lambda_fig4a.toml".as_ref())
        .unwrap()
        .to_scenario()
        .unwrap();
    let fig4b = load_scenario_file("scenarios/lambda_fig4b.toml".as_ref())
        .unwrap()
        .to_scenario()
        .unwrap();

    // ---- C3 on the frozen files, shared reference = bare Larmor ----
    let nu0 = fig4a.initial.beat_frequency_mhz(&fig4a.zeeman).abs();
    let (t, fd) = flux_of(&fig4a);
    let (_, fa) = flux_of(&fig4b);
    for t0 in [45.0, 150.0, 255.0] {
        let (pd, _) = hann_demod(&t, &fd, nu0, t0, 3.0);
        let (pa, _) = hann_demod(&t, &fa, nu0, t0, 3.0);
        println!("C3 frozen D/A flip t0={t0}: {:.3}", flip_deg(pa, pd));
    }
    let mut fpi_sc = fig4a.clone();
    fpi_sc.initial = fpi_sc.initial.with_phi_d0(PI);
    let (_, fpi) = flux_of(&fpi_sc);
    for t0 in [45.0, 150.0] {
        let (p0, _) = hann_demod(&t, &fd, nu0, t0, 3.0);
        let (ppi, _) = hann_demod(&t, &fpi, nu0, t0, 3.0);
        println!("C3 frozen phi0 flip t0={t0}: {:.3}", flip_deg(p0, ppi));
    }

    // ---- C2 preparation-fidelity knob ----
    let ia = fig3.initial.level_a().index();
    let ib = fig3.initial.level_b().index();
    for fidelity in [1.0, 0.8, 0.6] {
        let mut sc = fig3.clone();
        sc.imperfections.preparation_fidelity = fidelity;
        let rho0 = master::initial_density(&sc).unwrap();
        let coh = rho0[(ia, ib)].norm();
        let fr = fit::beat_fit_of_flux(&sc).unwrap();
        println!(
            "C2 fidelity={fidelity}: |rho_ab|={coh:.6}, fitted V={:.4}, conv={}",
            fr.param("visibility").unwrap(),
            fr.converged
        );
    }

    // ---- C4: incoherent mixture has no beat; flux is linear in the mixture ----
    let mut mix = fig3.clone();
    mix.initial_coherent = false;
    let (tm, fm) = flux_of(&mix);
    let mut pure1 = mix.clone();
    pure1.initial = pure1.initial.with_populations(1.0, 0.0).unwrap();
    let mut pure2 = mix.clone();
    pure2.initial = pure2.initial.with_populations(0.0, 1.0).unwrap();
    let (_, f1) = flux_of(&pure1);
    let (_, f2) = flux_of(&pure2);
    let peak = fm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lin = tm
        .iter()
        .enumerate()
        .map(|(i, _)| (fm[i] - 0.5 * (f1[i] + f2[i])).abs())
        .fold(0.0f64, f64::max);
    println!("C4 linearity: max dev / peak = {:.3e}", lin / peak);
    let fr = fit::beat_fit_of_flux(&mix).unwrap();
    println!(
        "C4 null visibility: {:.4e} (tau {:.1}, conv={})",
        fr.param("visibility").unwrap(),
        fr.param("tau_ns").unwrap(),
        fr.converged
    );
}
