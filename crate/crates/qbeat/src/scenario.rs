//! Scenario files: the TOML schema behind the CLI.
//!
//! A file has six sections — `[zeeman]`, `[initial_state]`, `[drive_854]`,
//! `[detection]`, `[decay]`, `[run]` — with units spelled out in every key
//! name. Validation is strict and complete: *all* unknown and missing keys
//! are reported in a single error, not just the first one found.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::amplitude::{PhotonPolarization, Scheme};
use crate::atomic::ZeemanConfig;
use crate::geometry::{Analyzer, CollectionGeometry};
use crate::master::{
    DecayConfig, Imperfections, LaserDrive, PulseEnvelope, Scenario, TimeGrid,
};
use crate::{Error, Result};

/// (section, required keys, optional keys)
const SCHEMA: &[(&str, &[&str], &[&str])] = &[
    ("zeeman", &["b_gauss"], &[]),
    (
        "initial_state",
        &["scheme"],
        &["phi_d0_rad", "population_b", "coherent", "preparation_fidelity"],
    ),
    (
        "drive_854",
        &["rabi_mhz", "pulse_ns"],
        &["detuning_mhz", "polarization", "t_on_ns", "rise_ns"],
    ),
    (
        "detection",
        &["numerical_aperture", "analyzer", "efficiency"],
        &["background_rate_per_ns"],
    ),
    ("decay", &[], &["gamma_p32_mhz", "branch_s12", "branch_d52", "branch_d32"]),
    (
        "run",
        &["t_max_ns"],
        &[
            "step_ns",
            "bin_ns",
            "seed",
            "n_triggers",
            "depletion_step_ns",
            "depletion_max_ns",
            "phase_points",
            "phase_mode",
            "phase_fixed_pulse_ns",
            "visibility_populations",
        ],
    ),
];

/// `[decay]` is the only section that may be omitted wholesale.
const OPTIONAL_SECTIONS: &[&str] = &["decay"];

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ScenarioFile {
    pub zeeman: ZeemanSection,
    pub initial_state: InitialStateSection,
    pub drive_854: DriveSection,
    pub detection: DetectionSection,
    #[serde(default)]
    pub decay: DecaySection,
    pub run: RunSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ZeemanSection {
    pub b_gauss: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct InitialStateSection {
    pub scheme: String,
    #[serde(default)]
    pub phi_d0_rad: f64,
    /// Population of the second (weaker-path) sublevel; scheme default when
    /// absent (½ for Λ, ¾ for V).
    pub population_b: Option<f64>,
    #[serde(default = "default_true")]
    pub coherent: bool,
    #[serde(default = "one")]
    pub preparation_fidelity: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct DriveSection {
    pub rabi_mhz: f64,
    pub pulse_ns: f64,
    /// Absent → the detuning balancing the two excitation paths.
    pub detuning_mhz: Option<f64>,
    #[serde(default = "default_polarization")]
    pub polarization: String,
    #[serde(default)]
    pub t_on_ns: f64,
    #[serde(default = "default_rise")]
    pub rise_ns: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct DetectionSection {
    pub numerical_aperture: f64,
    pub analyzer: String,
    pub efficiency: f64,
    #[serde(default)]
    pub background_rate_per_ns: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct DecaySection {
    pub gamma_p32_mhz: Option<f64>,
    pub branch_s12: Option<f64>,
    pub branch_d52: Option<f64>,
    pub branch_d32: Option<f64>,
}

impl Default for DecaySection {
    fn default() -> Self {
        DecaySection { gamma_p32_mhz: None, branch_s12: None, branch_d52: None, branch_d32: None }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct RunSection {
    pub t_max_ns: f64,
    #[serde(default = "default_step")]
    pub step_ns: f64,
    #[serde(default = "default_bin")]
    pub bin_ns: f64,
    #[serde(default = "one_u64")]
    pub seed: u64,
    #[serde(default = "default_triggers")]
    pub n_triggers: u64,
    #[serde(default = "default_depletion_step")]
    pub depletion_step_ns: f64,
    pub depletion_max_ns: Option<f64>,
    #[serde(default = "default_phase_points")]
    pub phase_points: usize,
    #[serde(default = "default_phase_mode")]
    pub phase_mode: String,
    #[serde(default = "default_depletion_step")]
    pub phase_fixed_pulse_ns: f64,
    pub visibility_populations: Option<Vec<f64>>,
}

fn default_true() -> bool {
    true
}
fn one() -> f64 {
    1.0
}
fn one_u64() -> u64 {
    1
}
fn default_polarization() -> String {
    "D".into()
}
fn default_rise() -> f64 {
    60.0
}
fn default_step() -> f64 {
    0.5
}
fn default_bin() -> f64 {
    2.0
}
fn default_triggers() -> u64 {
    100_000
}
fn default_depletion_step() -> f64 {
    12.5
}
fn default_phase_points() -> usize {
    12
}
fn default_phase_mode() -> String {
    "flux".into()
}

impl RunSection {
    /// Pulse lengths for a depletion scan: 0 up to the configured maximum
    /// (default: end of the time grid) in `depletion_step_ns` strides.
    pub fn depletion_lengths(&self, envelope_t_on: f64) -> Vec<f64> {
        let max = self.depletion_max_ns.unwrap_or(self.t_max_ns - envelope_t_on - 100.0);
        let mut lengths = vec![0.0];
        let mut l = self.depletion_step_ns;
        while l <= max {
            lengths.push(l);
            l += self.depletion_step_ns;
        }
        lengths
    }

    /// Evenly spaced laser phases over one turn for a phase scan.
    pub fn phase_values(&self) -> Vec<f64> {
        (0..self.phase_points)
            .map(|k| k as f64 * std::f64::consts::TAU / self.phase_points as f64)
            .collect()
    }

    pub fn population_values(&self) -> Vec<f64> {
        self.visibility_populations
            .clone()
            .unwrap_or_else(|| (0..11).map(|k| 0.25 + 0.07 * k as f64).collect())
    }
}

/// Parse and fully validate scenario TOML text.
pub fn parse_scenario_toml(text: &str) -> Result<ScenarioFile> {
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::config(format!("scenario file is not valid TOML: {e}")))?;
    check_schema(&table)?;
    let file: ScenarioFile = toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::config(format!("scenario file malformed: {e}")))?;
    // surface conversion problems (ranges, labels) at load time
    file.to_scenario()?;
    Ok(file)
}

pub fn load_scenario_file(path: &Path) -> Result<ScenarioFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    parse_scenario_toml(&text)
}

/// Collect *every* schema offense — unknown sections, unknown keys, missing
/// sections, missing keys — into one error.
fn check_schema(table: &toml::Table) -> Result<()> {
    let mut offenses: Vec<String> = Vec::new();
    for (name, value) in table {
        match SCHEMA.iter().find(|(s, _, _)| s == name) {
            None => offenses.push(format!("unknown section [{name}]")),
            Some((section, required, optional)) => {
                let Some(sub) = value.as_table() else {
                    offenses.push(format!("[{section}] must be a table of keys"));
                    continue;
                };
                for key in sub.keys() {
                    if !required.contains(&key.as_str()) && !optional.contains(&key.as_str()) {
                        offenses.push(format!("unknown key {section}.{key}"));
                    }
                }
                for key in *required {
                    if !sub.contains_key(*key) {
                        offenses.push(format!("missing required key {section}.{key}"));
                    }
                }
            }
        }
    }
    for (section, _, _) in SCHEMA {
        if !table.contains_key(*section) && !OPTIONAL_SECTIONS.contains(section) {
            offenses.push(format!("missing required section [{section}]"));
        }
    }
    if offenses.is_empty() {
        Ok(())
    } else {
        Err(Error::config(format!("scenario validation failed: {}", offenses.join("; "))))
    }
}

impl ScenarioFile {
    pub fn scheme(&self) -> Result<Scheme> {
        match self.initial_state.scheme.to_ascii_lowercase().as_str() {
            "lambda" => Ok(Scheme::Lambda),
            "v" => Ok(Scheme::V),
            other => Err(Error::config(format!(
                "initial_state.scheme {other:?} must be \"lambda\" or \"v\""
            ))),
        }
    }

    fn analyzer(&self) -> Result<Analyzer> {
        match self.detection.analyzer.to_ascii_uppercase().as_str() {
            "H" => Ok(Analyzer::H),
            "V" => Ok(Analyzer::V),
            other => Err(Error::config(format!(
                "detection.analyzer {other:?} must be \"H\" or \"V\""
            ))),
        }
    }

    /// Build the simulation scenario this file describes.
    pub fn to_scenario(&self) -> Result<Scenario> {
        let scheme = self.scheme()?;
        let mut initial = scheme.canonical_superposition(self.initial_state.phi_d0_rad);
        if let Some(p) = self.initial_state.population_b {
            initial = initial.with_populations(1.0 - p, p)?;
        }
        let drive = LaserDrive {
            rabi_mhz: self.drive_854.rabi_mhz,
            detuning_mhz: self.drive_854.detuning_mhz,
            polarization: PhotonPolarization::from_label(&self.drive_854.polarization)?,
            envelope: PulseEnvelope {
                t_on_ns: self.drive_854.t_on_ns,
                duration_ns: self.drive_854.pulse_ns,
                rise_ns: self.drive_854.rise_ns,
            },
        };
        let collection = CollectionGeometry::new(
            self.detection.numerical_aperture,
            self.analyzer()?,
            self.detection.efficiency,
        )?;
        let defaults = DecayConfig::default();
        let decay = DecayConfig {
            gamma_p32_mhz: self.decay.gamma_p32_mhz.unwrap_or(defaults.gamma_p32_mhz),
            branch_s12: self.decay.branch_s12.unwrap_or(defaults.branch_s12),
            branch_d52: self.decay.branch_d52.unwrap_or(defaults.branch_d52),
            branch_d32: self.decay.branch_d32.unwrap_or(defaults.branch_d32),
        };
        let sc = Scenario {
            scheme,
            initial,
            initial_coherent: self.initial_state.coherent,
            drive,
            collection,
            decay,
            zeeman: ZeemanConfig::new(self.zeeman.b_gauss)?,
            grid: TimeGrid {
                t_max_ns: self.run.t_max_ns,
                step_ns: self.run.step_ns,
                bin_ns: self.run.bin_ns,
            },
            imperfections: Imperfections {
                preparation_fidelity: self.initial_state.preparation_fidelity,
                polarization_impurity: 0.0,
                background_rate_per_ns: self.detection.background_rate_per_ns,
            },
        };
        sc.validate()?;
        Ok(sc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valid_toml() -> &'static str {
        r#"
[zeeman]
b_gauss = 2.798

[initial_state]
scheme = "lambda"
phi_d0_rad = 0.0

[drive_854]
rabi_mhz = 16.0
pulse_ns = 1200.0

[detection]
numerical_aperture = 0.4
analyzer = "H"
efficiency = 0.25

[run]
t_max_ns = 1400.0
seed = 7
n_triggers = 50000
"#
    }

    #[test]
    fn valid_file_parses_and_builds_a_scenario() {
        let file = parse_scenario_toml(valid_toml()).unwrap();
        let sc = file.to_scenario().unwrap();
        assert_eq!(sc.scheme, Scheme::Lambda);
        assert_eq!(sc.drive.envelope.rise_ns, 60.0, "default rise");
        assert_eq!(sc.grid.step_ns, 0.5, "default step");
        assert_eq!(sc.grid.bin_ns, 2.0, "default bin");
        assert!(sc.drive.detuning_mhz.is_none(), "auto-balanced by default");
        assert_eq!(file.run.seed, 7);
        assert_eq!(sc.initial.rho2(), 0.5);
    }

    #[test]
    fn population_override_and_v_scheme_defaults() {
        let text = valid_toml()
            .replace("scheme = \"lambda\"", "scheme = \"V\"\npopulation_b = 0.6")
            .replace("analyzer = \"H\"", "analyzer = \"v\"");
        let file = parse_scenario_toml(&text).unwrap();
        let sc = file.to_scenario().unwrap();
        assert_eq!(sc.scheme, Scheme::V);
        assert!((sc.initial.rho2() - 0.6).abs() < 1e-15);
        assert_eq!(sc.collection.analyzer, Analyzer::V);
    }

    #[test]
    fn every_offending_key_is_listed_at_once() {
        let text = r#"
[zeeman]
b_gaus = 2.798

[initial_state]
scheme = "lambda"
flavor = "strange"

[drive_854]
rabi_mhz = 16.0
pulse_ns = 1200.0

[detection]
numerical_aperture = 0.4
analyzer = "H"

[run]
t_max_ns = 1400.0

[telescope]
zoom = 10
"#;
        let err = parse_scenario_toml(text).unwrap_err().to_string();
        for needle in [
            "unknown key zeeman.b_gaus",
            "missing required key zeeman.b_gauss",
            "unknown key initial_state.flavor",
            "missing required key detection.efficiency",
            "unknown section [telescope]",
        ] {
            assert!(err.contains(needle), "error should mention {needle:?}, got: {err}");
        }
    }

    #[test]
    fn missing_sections_are_reported() {
        let err = parse_scenario_toml("[zeeman]\nb_gauss = 1.0\n").unwrap_err().to_string();
        for needle in ["[initial_state]", "[drive_854]", "[detection]", "[run]"] {
            assert!(err.contains(needle), "should list missing {needle}, got: {err}");
        }
        // decay is genuinely optional
        assert!(!err.contains("[decay]"));
    }

    #[test]
    fn out_of_range_values_are_rejected_at_parse_time() {
        let text = valid_toml().replace("rabi_mhz = 16.0", "rabi_mhz = -3.0");
        assert!(parse_scenario_toml(&text).is_err());
        let text = valid_toml().replace("numerical_aperture = 0.4", "numerical_aperture = 1.5");
        assert!(parse_scenario_toml(&text).is_err());
        let text = valid_toml().replace("scheme = \"lambda\"", "scheme = \"xi\"");
        assert!(parse_scenario_toml(&text).is_err());
    }

    #[test]
    fn run_section_scan_helpers() {
        let file = parse_scenario_toml(valid_toml()).unwrap();
        let phases = file.run.phase_values();
        assert_eq!(phases.len(), 12);
        assert!((phases[1] - std::f64::consts::TAU / 12.0).abs() < 1e-15);
        let lengths = file.run.depletion_lengths(0.0);
        assert_eq!(lengths[0], 0.0);
        assert!((lengths[1] - 12.5).abs() < 1e-12);
        assert!(*lengths.last().unwrap() <= 1300.0);
        let pops = file.run.population_values();
        assert_eq!(pops.len(), 11);
        assert!(pops.iter().all(|p| *p > 0.2 && *p < 0.96));
    }
}
