//! Command implementations behind the `qbeat` binary: each takes a scenario
//! file, produces plot-ready CSV plus JSON metadata, and drops a run
//! manifest (config hash, seed, versions). Outputs are byte-identical for
//! identical scenario + seed; the only nondeterministic value, the wall
//! clock, lives in a single manifest field.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::json;
use sha2::{Digest, Sha256};

use crate::fit::{
    self, BeatShape, DecayModel, FitModel, FitResult, SinusoidModel,
};
use crate::histogram::{build_histogram, Histogram, HistogramMeta};
use crate::master::{self, PhaseScanMode, Scenario};
use crate::scenario::{parse_scenario_toml, RunSection, ScenarioFile};
use crate::timetag::{read_timetags, write_timetags, QbttHeader, QBTT_VERSION};
use crate::trajectory::sample_clicks;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Beat,
    Sample,
    Hist,
    Fit,
    Depletion,
    PhaseScan,
    VisibilityScan,
}

impl Command {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "beat" => Ok(Command::Beat),
            "sample" => Ok(Command::Sample),
            "hist" => Ok(Command::Hist),
            "fit" => Ok(Command::Fit),
            "depletion" => Ok(Command::Depletion),
            "phasescan" => Ok(Command::PhaseScan),
            "visibility-scan" => Ok(Command::VisibilityScan),
            other => Err(Error::config(format!(
                "unknown command {other:?} (expected beat, sample, hist, fit, depletion, \
                 phasescan or visibility-scan)"
            ))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Command::Beat => "beat",
            Command::Sample => "sample",
            Command::Hist => "hist",
            Command::Fit => "fit",
            Command::Depletion => "depletion",
            Command::PhaseScan => "phasescan",
            Command::VisibilityScan => "visibility-scan",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Override the scenario's `[run] seed`.
    pub seed: Option<u64>,
    /// Worker threads for scan points; `None` uses every core.
    pub jobs: Option<usize>,
    /// Override the scenario's `[run] bin_ns`.
    pub bin_ns: Option<f64>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions { out_dir: out_dir.into(), seed: None, jobs: None, bin_ns: None }
    }
}

struct RunContext {
    sc: Scenario,
    file: ScenarioFile,
    run: RunSection,
    config_hash: String,
    stem: String,
    out: PathBuf,
}

/// Execute one command for a scenario file. Returns every file written,
/// manifest last.
pub fn run_scenario(path: &Path, command: Command, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let file = parse_scenario_toml(&text)?;
    let mut run = file.run.clone();
    if let Some(seed) = opts.seed {
        run.seed = seed;
    }
    if let Some(bin) = opts.bin_ns {
        run.bin_ns = bin;
    }
    let mut sc = file.to_scenario()?;
    sc.grid.bin_ns = run.bin_ns;
    sc.validate()?;

    let config_hash = hex_sha256(text.as_bytes());
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scenario")
        .to_string();
    fs::create_dir_all(&opts.out_dir)
        .map_err(|e| Error::Io { path: opts.out_dir.clone(), source: e })?;
    let ctx = RunContext { sc, file, run, config_hash, stem, out: opts.out_dir.clone() };

    let body = || -> Result<Vec<PathBuf>> {
        match command {
            Command::Beat => run_beat(&ctx),
            Command::Sample => run_sample(&ctx),
            Command::Hist => run_hist(&ctx),
            Command::Fit => run_fit(&ctx),
            Command::Depletion => run_depletion(&ctx),
            Command::PhaseScan => run_phasescan(&ctx),
            Command::VisibilityScan => run_visibility(&ctx),
        }
    };
    let mut files = match opts.jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::config(format!("cannot build a {n}-thread pool: {e}")))?;
            pool.install(body)?
        }
        None => body()?,
    };

    let manifest = ctx.out.join(format!("{}_{}_manifest.json", ctx.stem, command.label()));
    let outputs: Vec<String> = files
        .iter()
        .map(|f| f.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    let manifest_body = json!({
        "command": command.label(),
        "scenario": path.file_name().unwrap_or_default().to_string_lossy(),
        "config_sha256": ctx.config_hash,
        "seed": ctx.run.seed,
        "versions": {
            "qbeat": env!("CARGO_PKG_VERSION"),
            "qbtt_format": QBTT_VERSION,
        },
        "outputs": outputs,
        // the single nondeterministic field of an entire run
        "timestamp_unix": unix_now(),
    });
    write_bytes(&manifest, (serde_json::to_string_pretty(&manifest_body).unwrap() + "\n").as_bytes())?;
    files.push(manifest);
    Ok(files)
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn hex_sha256(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn write_csv(path: &Path, header: &str, rows: &[(f64, f64)]) -> Result<()> {
    let mut buf = Vec::with_capacity(rows.len() * 32 + header.len() + 1);
    writeln!(buf, "{header}").unwrap();
    for (x, y) in rows {
        writeln!(buf, "{x:.4},{y:.9e}").unwrap();
    }
    write_bytes(path, &buf)
}

/// Two-column CSV with a single header line.
fn read_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, ',');
        let parse = |s: Option<&str>| -> Result<f64> {
            s.map(str::trim)
                .ok_or(())
                .and_then(|v| v.parse::<f64>().map_err(|_| ()))
                .map_err(|_| {
                    Error::format(
                        0,
                        format!("{}: line {} is not `x,y`: {line:?}", path.display(), lineno + 1),
                    )
                })
        };
        xs.push(parse(parts.next())?);
        ys.push(parse(parts.next())?);
    }
    Ok((xs, ys))
}

fn fit_report_json(res: &FitResult, model: &str, window: serde_json::Value) -> serde_json::Value {
    json!({
        "model": model,
        "names": res.names,
        "params": res.params,
        "sigmas": res.sigmas,
        "chi2": res.chi2,
        "reduced_chi2": res.reduced_chi2,
        "iterations": res.iterations,
        "converged": res.converged,
        "window": window,
    })
}

fn run_beat(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let evo = master::evolve(&ctx.sc)?;
    let flux = master::detection_flux(&ctx.sc, &evo)?;
    let rows: Vec<(f64, f64)> = evo.times.iter().copied().zip(flux.iter().copied()).collect();
    let csv = ctx.out.join(format!("{}_beat.csv", ctx.stem));
    write_csv(&csv, "t_ns,flux_per_ns", &rows)?;

    let inv = evo.worst_invariants();
    let meta = json!({
        "scenario": ctx.file,
        "config_sha256": ctx.config_hash,
        "detuning_mhz": ctx.sc.resolved_detuning_mhz()?,
        "beat_frequency_mhz": ctx.sc.initial.beat_frequency_mhz(&ctx.sc.zeeman),
        "invariants": {
            "trace_deviation": inv.trace_deviation,
            "hermiticity": inv.hermiticity,
            "min_eigenvalue": inv.min_eigenvalue,
        },
    });
    let jsn = ctx.out.join(format!("{}_beat.json", ctx.stem));
    write_bytes(&jsn, (serde_json::to_string_pretty(&meta).unwrap() + "\n").as_bytes())?;
    Ok(vec![csv, jsn])
}

fn run_sample(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let records = sample_clicks(&ctx.sc, ctx.run.n_triggers, ctx.run.seed)?;
    let header = QbttHeader {
        scenario_hash: ctx.config_hash.clone(),
        seed: ctx.run.seed,
        n_triggers: ctx.run.n_triggers,
        bin_hint_ns: ctx.run.bin_ns,
    };
    let path = ctx.out.join(format!("{}.qbtt", ctx.stem));
    let mut buf = Vec::new();
    write_timetags(&mut buf, &header, records)?;
    write_bytes(&path, &buf)?;
    Ok(vec![path])
}

/// Histogram the scenario's QBTT stream (sampling it first if the file is
/// not there yet).
fn run_hist(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let qbtt_path = ctx.out.join(format!("{}.qbtt", ctx.stem));
    let mut files = Vec::new();
    if !qbtt_path.exists() {
        files.extend(run_sample(ctx)?);
    }
    let bytes = fs::read(&qbtt_path)
        .map_err(|e| Error::Io { path: qbtt_path.clone(), source: e })?;
    let (header, records) = read_timetags(bytes.as_slice())?;
    let h = build_histogram(
        &records,
        ctx.run.bin_ns,
        (0.0, ctx.sc.grid.t_max_ns),
        header.n_triggers,
        HistogramMeta { scenario_hash: header.scenario_hash, seed: header.seed },
    )?;
    let rows: Vec<(f64, f64)> =
        h.bin_centers().into_iter().zip(h.counts.iter().map(|&c| c as f64)).collect();
    let csv = ctx.out.join(format!("{}_hist.csv", ctx.stem));
    write_csv(&csv, "t_ns,counts", &rows)?;
    let meta = json!({
        "bin_width_ns": h.bin_width_ns,
        "window_start_ns": h.window_start_ns,
        "window_end_ns": h.window_end_ns,
        "total_triggers": h.total_triggers,
        "total_counts": h.total_counts(),
        "dropped": h.dropped,
        "metadata": h.metadata,
    });
    let jsn = ctx.out.join(format!("{}_hist.json", ctx.stem));
    write_bytes(&jsn, (serde_json::to_string_pretty(&meta).unwrap() + "\n").as_bytes())?;
    files.extend([csv, jsn]);
    Ok(files)
}

/// Beat-model fit of the scenario's histogram (building it first if
/// needed). Bins during the drive turn-on ramp are excluded: the decaying
/// beat model only describes the settled part of the pulse.
fn run_fit(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let hist_csv = ctx.out.join(format!("{}_hist.csv", ctx.stem));
    let mut files = Vec::new();
    if !hist_csv.exists() {
        files.extend(run_hist(ctx)?);
    }
    let (t_all, y_all) = read_csv(&hist_csv)?;
    if t_all.len() < 2 {
        return Err(Error::fit(format!("{}: too few histogram rows", hist_csv.display())));
    }
    let env = &ctx.sc.drive.envelope;
    let fit_start = env.t_on_ns + env.rise_ns + 5.0;
    let fit_end = (env.t_on_ns + env.duration_ns).min(ctx.sc.grid.t_max_ns);
    let keep: Vec<usize> = (0..t_all.len())
        .filter(|&i| t_all[i] >= fit_start && t_all[i] <= fit_end)
        .collect();
    if keep.len() < 8 {
        return Err(Error::fit(format!(
            "only {} histogram bins fall inside the settled window [{fit_start}, {fit_end}] ns",
            keep.len()
        )));
    }
    let t: Vec<f64> = keep.iter().map(|&i| t_all[i]).collect();
    let y: Vec<f64> = keep.iter().map(|&i| y_all[i]).collect();
    let bin = t_all[1] - t_all[0];
    let h = Histogram {
        bin_width_ns: bin,
        window_start_ns: t[0] - 0.5 * bin,
        window_end_ns: t[t.len() - 1] + 0.5 * bin,
        counts: y.iter().map(|v| v.round().max(0.0) as u64).collect(),
        total_triggers: ctx.run.n_triggers,
        dropped: 0,
        metadata: HistogramMeta { scenario_hash: ctx.config_hash.clone(), seed: ctx.run.seed },
    };
    let nu = ctx.sc.initial.beat_frequency_mhz(&ctx.sc.zeeman).abs();
    let res = fit::fit_beat(&h, Some(nu))?;

    let window = json!({
        "t_start_ns": h.window_start_ns,
        "t_end_ns": h.window_end_ns,
        "bin_ns": h.bin_width_ns,
        "n_points": t.len(),
    });
    let report = fit_report_json(&res, "beat", window);
    let jsn = ctx.out.join(format!("{}_fit.json", ctx.stem));
    write_bytes(&jsn, (serde_json::to_string_pretty(&report).unwrap() + "\n").as_bytes())?;

    let mut buf = Vec::new();
    writeln!(buf, "t_ns,counts,model,residual").unwrap();
    for (ti, yi) in t.iter().zip(&y) {
        let m = BeatShape.value(*ti, &res.params);
        writeln!(buf, "{ti:.4},{yi:.9e},{m:.9e},{:.9e}", yi - m).unwrap();
    }
    let resid = ctx.out.join(format!("{}_fit_residuals.csv", ctx.stem));
    write_bytes(&resid, &buf)?;
    files.extend([jsn, resid]);
    Ok(files)
}

fn run_depletion(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let lengths = ctx.run.depletion_lengths(ctx.sc.drive.envelope.t_on_ns);
    let curve = master::depletion_scan(&ctx.sc, &lengths)?;
    let rows: Vec<(f64, f64)> = curve.x.into_iter().zip(curve.y).collect();
    let csv = ctx.out.join(format!("{}_depletion.csv", ctx.stem));
    write_csv(&csv, "pulse_ns,d52_population", &rows)?;
    Ok(vec![csv])
}

fn run_phasescan(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let phases = ctx.run.phase_values();
    let (mode, sc) = match ctx.run.phase_mode.as_str() {
        "flux" => (PhaseScanMode::IntegratedFlux, ctx.sc.clone()),
        "depletion" => {
            let mut sc = ctx.sc.clone();
            sc.drive.envelope.duration_ns = ctx.run.phase_fixed_pulse_ns;
            (PhaseScanMode::DepletionAtFixedPulse, sc)
        }
        other => {
            return Err(Error::config(format!(
                "run.phase_mode {other:?} must be \"flux\" or \"depletion\""
            )))
        }
    };
    let curve = master::phase_scan(&sc, &phases, mode)?;
    let rows: Vec<(f64, f64)> = curve.x.iter().copied().zip(curve.y.iter().copied()).collect();
    let csv = ctx.out.join(format!("{}_phasescan.csv", ctx.stem));
    write_csv(&csv, "phi_rad,value", &rows)?;

    let sin = fit::fit_sinusoid(&curve.x, &curve.y)?;
    let (vis, ratio) = fit::sinusoid_visibility(&sin);
    let mut report = fit_report_json(&sin, "sinusoid", json!({ "n_points": phases.len() }));
    report["visibility"] = json!(vis);
    report["max_min_ratio"] = json!(ratio);
    report["mode"] = json!(ctx.run.phase_mode);
    let jsn = ctx.out.join(format!("{}_phasescan.json", ctx.stem));
    write_bytes(&jsn, (serde_json::to_string_pretty(&report).unwrap() + "\n").as_bytes())?;
    Ok(vec![csv, jsn])
}

fn run_visibility(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let pops = ctx.run.population_values();
    let scan = fit::visibility_scan(&ctx.sc, &pops)?;
    let rows: Vec<(f64, f64)> = scan
        .populations
        .iter()
        .copied()
        .zip(scan.visibilities.iter().copied())
        .collect();
    let csv = ctx.out.join(format!("{}_visibility.csv", ctx.stem));
    write_csv(&csv, "population,visibility", &rows)?;
    let meta = json!({
        "argmax": scan.argmax.map(|(p, v)| json!({ "population": p, "visibility": v })),
        "populations": scan.populations,
        "visibilities": scan.visibilities,
    });
    let jsn = ctx.out.join(format!("{}_visibility.json", ctx.stem));
    write_bytes(&jsn, (serde_json::to_string_pretty(&meta).unwrap() + "\n").as_bytes())?;
    Ok(vec![csv, jsn])
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CompareReport {
    pub n_points: usize,
    pub chi2: f64,
    pub reduced_chi2: f64,
    pub max_abs_deviation: f64,
    pub at_t_ns: f64,
}

/// Overlay a fit report on simulated/histogrammed data: χ² against the
/// model in the report, plus the largest pointwise deviation. The CSV must
/// have exactly the rows the fit was made on.
pub fn compare(sim_csv: &Path, fit_json: &Path) -> Result<CompareReport> {
    let (t, y) = read_csv(sim_csv)?;
    let text = fs::read_to_string(fit_json)
        .map_err(|e| Error::Io { path: fit_json.to_path_buf(), source: e })?;
    let report: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::format(0, format!("{}: not valid JSON: {e}", fit_json.display())))?;

    let params: Vec<f64> = report["params"]
        .as_array()
        .ok_or_else(|| Error::format(0, "fit report lacks a params array".to_string()))?
        .iter()
        .filter_map(|v| v.as_f64())
        .collect();
    let model_name = report["model"].as_str().unwrap_or("beat");
    let model: &dyn FitModel = match model_name {
        "beat" => &BeatShape,
        "decay" => &DecayModel,
        "sinusoid" => &SinusoidModel,
        other => {
            return Err(Error::format(0, format!("unknown model {other:?} in fit report")))
        }
    };
    if params.len() != model.param_count() {
        return Err(Error::format(
            0,
            format!(
                "fit report has {} params, model {model_name:?} needs {}",
                params.len(),
                model.param_count()
            ),
        ));
    }
    if let Some(n) = report["window"]["n_points"].as_u64() {
        if n as usize != t.len() {
            return Err(Error::domain(format!(
                "grid mismatch: data has {} rows but the fit was made on {n} rows",
                t.len()
            )));
        }
    }

    let mut chi2 = 0.0;
    let mut max_dev = 0.0f64;
    let mut max_t = 0.0;
    for (ti, yi) in t.iter().zip(&y) {
        let m = model.value(*ti, &params);
        let dev = (yi - m).abs();
        chi2 += dev * dev / m.abs().max(1.0);
        if dev > max_dev {
            max_dev = dev;
            max_t = *ti;
        }
    }
    let dof = t.len().saturating_sub(model.param_count()).max(1);
    Ok(CompareReport {
        n_points: t.len(),
        chi2,
        reduced_chi2: chi2 / dof as f64,
        max_abs_deviation: max_dev,
        at_t_ns: max_t,
    })
}
