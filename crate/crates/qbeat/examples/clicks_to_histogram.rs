//! Monte-Carlo click sampling end to end: draw trajectories, serialize the
//! clicks as a QBTT stream, read the stream back and histogram it.

use qbeat::histogram::{build_histogram, HistogramMeta};
use qbeat::scenario::parse_scenario_toml;
use qbeat::timetag::{read_timetags, write_timetags, QbttHeader};
use qbeat::trajectory::sample_clicks;

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
background_rate_per_ns = 1e-5

[run]
t_max_ns = 360.0
seed = 42
n_triggers = 40000
"#;

fn main() -> qbeat::Result<()> {
    let file = parse_scenario_toml(SCENARIO)?;
    let sc = file.to_scenario()?;
    let n = file.run.n_triggers;

    let clicks = sample_clicks(&sc, n, file.run.seed)?;
    println!("{} triggers -> {} clicks", n, clicks.len());

    let header = QbttHeader {
        scenario_hash: "inline".into(),
        seed: file.run.seed,
        n_triggers: n,
        bin_hint_ns: file.run.bin_ns,
    };
    let mut bytes = Vec::new();
    write_timetags(&mut bytes, &header, clicks)?;
    println!("QBTT stream: {} bytes", bytes.len());

    let (header, records) = read_timetags(bytes.as_slice())?;
    let hist = build_histogram(
        &records,
        4.0,
        (0.0, sc.grid.t_max_ns),
        header.n_triggers,
        HistogramMeta { scenario_hash: header.scenario_hash, seed: header.seed },
    )?;

    let peak = hist.counts.iter().copied().max().unwrap_or(1) as f64;
    println!();
    for (t, c) in hist.bin_centers().iter().zip(&hist.counts) {
        if *t > 260.0 {
            break;
        }
        let bar = "#".repeat((*c as f64 / peak * 60.0).round() as usize);
        println!("{t:6.0} ns {c:5}  {bar}");
    }
    println!("... {} clicks total, {} outside the window", hist.total_counts(), hist.dropped);
    Ok(())
}
