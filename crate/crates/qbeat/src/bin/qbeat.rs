use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qbeat::pipeline::{self, Command, RunOptions};
use qbeat::Error;

/// Quantum-beat simulator and analysis pipeline for a single trapped ion.
///
/// Every run command reads a TOML scenario and writes CSV/JSON artifacts
/// plus a manifest into the output directory (--out, else $QBEAT_OUT_DIR,
/// else the current directory).
#[derive(Parser)]
#[command(name = "qbeat", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Ensemble-averaged detection flux vs time (master equation)
    Beat(RunArgs),
    /// Monte-Carlo click stream, written as a QBTT time-tag file
    Sample(RunArgs),
    /// Histogram of the scenario's click stream (samples first if needed)
    Hist(RunArgs),
    /// Decaying-beat model fit of the histogram (builds it if needed)
    Fit(RunArgs),
    /// Remaining D5/2 population vs drive pulse length
    Depletion(RunArgs),
    /// Signal vs prepared phase, fitted with a sinusoid
    Phasescan(RunArgs),
    /// Beat visibility vs initial population split
    #[command(name = "visibility-scan")]
    VisibilityScan(RunArgs),
    /// Check a fit report against simulated or histogrammed data
    Compare {
        /// Two-column CSV (x, value) on exactly the fitted grid
        sim_csv: PathBuf,
        /// Fit report JSON produced by `fit` or `phasescan`
        fit_json: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML file
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (default: $QBEAT_OUT_DIR or `.`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario's RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    jobs: Option<usize>,
    /// Override the scenario's histogram bin width
    #[arg(long = "bin-ns")]
    bin_ns: Option<f64>,
}

impl RunArgs {
    fn options(&self) -> RunOptions {
        let out = self
            .out
            .clone()
            .or_else(|| std::env::var_os("QBEAT_OUT_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        RunOptions {
            out_dir: out,
            seed: self.seed,
            jobs: self.jobs,
            bin_ns: self.bin_ns,
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let (command, args) = match cli.cmd {
        Cmd::Beat(a) => (Command::Beat, a),
        Cmd::Sample(a) => (Command::Sample, a),
        Cmd::Hist(a) => (Command::Hist, a),
        Cmd::Fit(a) => (Command::Fit, a),
        Cmd::Depletion(a) => (Command::Depletion, a),
        Cmd::Phasescan(a) => (Command::PhaseScan, a),
        Cmd::VisibilityScan(a) => (Command::VisibilityScan, a),
        Cmd::Compare { sim_csv, fit_json } => {
            let report = pipeline::compare(&sim_csv, &fit_json)?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            return Ok(());
        }
    };
    for path in pipeline::run_scenario(&args.scenario, command, &args.options())? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let detail = serde_json::json!({
                "category": e.category(),
                "message": e.to_string(),
                "exit_code": e.exit_code(),
            });
            eprintln!("{detail}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
