//! 18-level Lindblad master equation for the pulsed 854-nm excitation
//! D₅/₂ → P₃/₂ and the subsequent spontaneous decay, in the frame rotating at
//! the laser frequency.
//!
//! Units: times in ns, frequencies in MHz. A level with Zeeman shift z (MHz)
//! contributes 2π·10⁻³·z rad/ns to the Hamiltonian diagonal; P₃/₂ levels are
//! additionally shifted by −Δ (laser detuning). The drive couples D₅/₂ to
//! P₃/₂ with matrix elements (Ω/2)·a_q·⟨CGC⟩ scaled by the pulse envelope,
//! where (a₊, a₋) is the Jones vector of the beam propagating along the
//! field axis (no π component). P₃/₂ decays through nine jump operators —
//! one per (destination manifold, photon polarization q) — with rates
//! Γ·β_branch; P₁/₂ and D₃/₂ only ever act as population sinks here because
//! the repump lasers are off during the photon-generation window.
//!
//! The photodetection operator M folds the 393-nm decay channels through the
//! analyzer/aperture overlap matrix of [`crate::geometry`], giving the click
//! rate per ns as Γ·β_S·η·Tr[ρM].

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector};
use rayon::prelude::*;

use crate::amplitude::{
    AtomicSuperposition, PhotonPolarization, Scheme, atomic_frame_polarization, balance_detuning,
};
use crate::atomic::{Manifold, NUM_LEVELS, Sublevel, ZeemanConfig, channel_table, zeeman_shift};
use crate::geometry::{CollectionGeometry, q_index};
use crate::ode::Dopri5;
use crate::{C64, Error, Result};

/// rad/ns per MHz.
pub(crate) const RAD_PER_NS_PER_MHZ: f64 = 2.0 * std::f64::consts::PI * 1e-3;

/// Default P₃/₂ linewidth, MHz.
pub const DEFAULT_GAMMA_P32_MHZ: f64 = 23.0;

/// Drive-off settling time appended after a pulse before the remaining D₅/₂
/// population is read out; long enough for P₃/₂ to empty completely.
pub const DEPLETION_SETTLE_NS: f64 = 60.0;

/// P₃/₂ decay rates by destination manifold. The defaults are literature
/// values for the 393/854/850-nm branches; they sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayConfig {
    pub gamma_p32_mhz: f64,
    pub branch_s12: f64,
    pub branch_d52: f64,
    pub branch_d32: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig {
            gamma_p32_mhz: DEFAULT_GAMMA_P32_MHZ,
            branch_s12: 0.9347,
            branch_d52: 0.0587,
            branch_d32: 0.0066,
        }
    }
}

impl DecayConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_p32_mhz > 0.0) {
            return Err(Error::config(format!(
                "P3/2 linewidth {} MHz must be positive",
                self.gamma_p32_mhz
            )));
        }
        let branches = [self.branch_s12, self.branch_d52, self.branch_d32];
        if branches.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::config("branching fractions must lie in [0, 1]".to_string()));
        }
        let sum: f64 = branches.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::config(format!("branching fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Total P₃/₂ population decay rate in 1/ns.
    pub fn gamma_rad_per_ns(&self) -> f64 {
        RAD_PER_NS_PER_MHZ * self.gamma_p32_mhz
    }
}

/// Pulse envelope in [0, 1]: raised-cosine rise starting at `t_on_ns`,
/// nominal length `duration_ns` (measured rise start → fall start), and a
/// raised-cosine fall of the same `rise_ns`. A pulse shorter than the rise
/// time is cut mid-ramp, like an AOM switched off early; `duration_ns = 0`
/// means no pulse at all.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseEnvelope {
    pub t_on_ns: f64,
    pub duration_ns: f64,
    pub rise_ns: f64,
}

impl PulseEnvelope {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("t_on_ns", self.t_on_ns), ("duration_ns", self.duration_ns), ("rise_ns", self.rise_ns)]
        {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("envelope {name} = {v} must be ≥ 0")));
            }
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        if self.duration_ns == 0.0 {
            return 0.0;
        }
        let up = if t <= self.t_on_ns {
            0.0
        } else if self.rise_ns > 0.0 && t < self.t_on_ns + self.rise_ns {
            0.5 * (1.0 - (std::f64::consts::PI * (t - self.t_on_ns) / self.rise_ns).cos())
        } else {
            1.0
        };
        let t_off = self.t_on_ns + self.duration_ns;
        let down = if t < t_off {
            1.0
        } else if self.rise_ns > 0.0 && t < t_off + self.rise_ns {
            0.5 * (1.0 + (std::f64::consts::PI * (t - t_off) / self.rise_ns).cos())
        } else {
            0.0
        };
        up * down
    }

    /// Time after which the envelope is identically zero.
    pub fn support_end(&self) -> f64 {
        if self.duration_ns == 0.0 {
            self.t_on_ns
        } else {
            self.t_on_ns + self.duration_ns + self.rise_ns
        }
    }

    /// Breakpoints where the envelope is not smooth; integration is split
    /// there.
    fn knots(&self) -> [f64; 4] {
        let t_off = self.t_on_ns + self.duration_ns;
        [self.t_on_ns, self.t_on_ns + self.rise_ns, t_off, t_off + self.rise_ns]
    }
}

/// The 854-nm drive: Rabi frequency on a unit-CGC transition, detuning from
/// the unshifted D₅/₂→P₃/₂ line (`None` = balance the two scheme channels
/// automatically), beam polarization, and pulse envelope.
#[derive(Debug, Clone, Copy)]
pub struct LaserDrive {
    pub rabi_mhz: f64,
    pub detuning_mhz: Option<f64>,
    pub polarization: PhotonPolarization,
    pub envelope: PulseEnvelope,
}

impl LaserDrive {
    pub fn validate(&self) -> Result<()> {
        if !self.rabi_mhz.is_finite() || self.rabi_mhz < 0.0 {
            return Err(Error::config(format!("rabi_mhz = {} must be ≥ 0", self.rabi_mhz)));
        }
        if let Some(d) = self.detuning_mhz {
            if !d.is_finite() {
                return Err(Error::config("detuning_mhz must be finite".to_string()));
            }
        }
        self.envelope.validate()
    }
}

/// Output sampling grid: states are stored every `step_ns` up to `t_max_ns`;
/// `bin_ns` is the default histogram bin downstream (2 ns unless overridden).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_max_ns: f64,
    pub step_ns: f64,
    pub bin_ns: f64,
}

impl TimeGrid {
    pub fn new(t_max_ns: f64, step_ns: f64) -> Self {
        TimeGrid { t_max_ns, step_ns, bin_ns: 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max_ns > 0.0) || !(self.step_ns > 0.0) || self.step_ns > self.t_max_ns {
            return Err(Error::config(format!(
                "time grid needs 0 < step_ns ≤ t_max_ns, got step {} / t_max {}",
                self.step_ns, self.t_max_ns
            )));
        }
        if !(self.bin_ns > 0.0) || self.bin_ns + 1e-12 < self.step_ns {
            return Err(Error::config(format!(
                "bin_ns = {} must be ≥ step_ns = {}",
                self.bin_ns, self.step_ns
            )));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        let n = (self.t_max_ns / self.step_ns + 1e-9).floor() as usize;
        let mut ts: Vec<f64> = (0..=n).map(|i| i as f64 * self.step_ns).collect();
        if self.t_max_ns - ts[ts.len() - 1] > 1e-9 * self.t_max_ns.max(1.0) {
            ts.push(self.t_max_ns);
        }
        ts
    }
}

/// Deviations from the ideal experiment, all off by default. These are the
/// knobs that lower the observed visibility below 1 without touching the
/// geometry model: imperfect preparation mixes in the orthogonal
/// superposition, polarization impurity admixes the orthogonal Jones vector
/// to the 854-nm beam coherently, and a flat background rate adds
/// phase-independent clicks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Imperfections {
    pub preparation_fidelity: f64,
    pub polarization_impurity: f64,
    pub background_rate_per_ns: f64,
}

impl Default for Imperfections {
    fn default() -> Self {
        Imperfections {
            preparation_fidelity: 1.0,
            polarization_impurity: 0.0,
            background_rate_per_ns: 0.0,
        }
    }
}

impl Imperfections {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.preparation_fidelity) {
            return Err(Error::config(format!(
                "preparation_fidelity = {} must lie in [0, 1]",
                self.preparation_fidelity
            )));
        }
        if !(0.0..=1.0).contains(&self.polarization_impurity) {
            return Err(Error::config(format!(
                "polarization_impurity = {} must lie in [0, 1]",
                self.polarization_impurity
            )));
        }
        if !self.background_rate_per_ns.is_finite() || self.background_rate_per_ns < 0.0 {
            return Err(Error::config(format!(
                "background_rate_per_ns = {} must be ≥ 0",
                self.background_rate_per_ns
            )));
        }
        Ok(())
    }
}

/// Everything needed to run one simulated sequence.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub scheme: Scheme,
    pub zeeman: ZeemanConfig,
    pub initial: AtomicSuperposition,
    /// false → prepare the incoherent mixture of the two populations instead
    /// of the superposition (the reference state without a beat).
    pub initial_coherent: bool,
    pub drive: LaserDrive,
    pub collection: CollectionGeometry,
    pub decay: DecayConfig,
    pub grid: TimeGrid,
    pub imperfections: Imperfections,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.drive.validate()?;
        self.decay.validate()?;
        self.grid.validate()?;
        self.imperfections.validate()
    }

    /// The drive detuning actually used: the configured value, or the
    /// channel-balancing detuning when unset.
    pub fn resolved_detuning_mhz(&self) -> Result<f64> {
        match self.drive.detuning_mhz {
            Some(d) => Ok(d),
            None => balance_detuning(self.scheme, &self.zeeman, self.decay.gamma_p32_mhz),
        }
    }
}

/// One spontaneous-decay jump channel: P₃/₂ → `target` with photon
/// polarization `q`. `entries` are (lower index, upper index, CGC) triples;
/// the operator is √`rate_per_ns` · Σ CGC·|lower⟩⟨upper|.
#[derive(Debug, Clone)]
pub struct JumpOp {
    pub target: Manifold,
    pub q: i8,
    pub rate_per_ns: f64,
    pub entries: Vec<(usize, usize, f64)>,
}

/// Assembled right-hand side of the master equation for one scenario, plus
/// the detection operator of its collection geometry.
pub struct Generator {
    h_static: DMatrix<C64>,
    drive_entries: Vec<(usize, usize, C64)>,
    envelope: PulseEnvelope,
    jumps: Vec<JumpOp>,
    gamma: f64,
    detection: DMatrix<C64>,
    flux_scale: f64,
    background: f64,
    detuning_mhz: f64,
}

struct Scratch {
    h: DMatrix<C64>,
    hr: DMatrix<C64>,
}

impl Generator {
    pub fn new(sc: &Scenario) -> Result<Self> {
        sc.validate()?;
        let n = NUM_LEVELS;
        let delta = sc.resolved_detuning_mhz()?;
        let gamma = sc.decay.gamma_rad_per_ns();

        let mut h_static = DMatrix::<C64>::zeros(n, n);
        for i in 0..n {
            let level = Sublevel::from_index(i)?;
            let mut z = zeeman_shift(&sc.zeeman, level);
            if level.manifold() == Manifold::P32 {
                z -= delta;
            }
            h_static[(i, i)] = C64::new(RAD_PER_NS_PER_MHZ * z, 0.0);
        }

        // 854-nm drive, σ⁺/σ⁻ only (beam along the field axis). An impurity
        // ε replaces the Jones vector by √(1−ε)·ψ + √ε·ψ⊥.
        let (mut a_plus, mut a_minus) = atomic_frame_polarization(sc.drive.polarization);
        let eps = sc.imperfections.polarization_impurity;
        if eps > 0.0 {
            let (o_plus, o_minus) = (-a_minus.conj(), a_plus.conj());
            let (c0, c1) = ((1.0 - eps).sqrt(), eps.sqrt());
            let mixed_plus = a_plus * c0 + o_plus * c1;
            let mixed_minus = a_minus * c0 + o_minus * c1;
            (a_plus, a_minus) = (mixed_plus, mixed_minus);
        }
        let half_rabi = 0.5 * RAD_PER_NS_PER_MHZ * sc.drive.rabi_mhz;
        let mut drive_entries = Vec::new();
        if sc.drive.rabi_mhz > 0.0 {
            for ch in channel_table(Manifold::D52, Manifold::P32)? {
                let a_q = match ch.q {
                    1 => a_plus,
                    -1 => a_minus,
                    _ => continue,
                };
                if a_q == C64::new(0.0, 0.0) {
                    continue;
                }
                let g = a_q * (half_rabi * ch.cgc);
                drive_entries.push((ch.upper.index(), ch.lower.index(), g));
                drive_entries.push((ch.lower.index(), ch.upper.index(), g.conj()));
            }
        }

        let mut jumps = Vec::new();
        for (target, branch) in [
            (Manifold::S12, sc.decay.branch_s12),
            (Manifold::D52, sc.decay.branch_d52),
            (Manifold::D32, sc.decay.branch_d32),
        ] {
            let channels = channel_table(target, Manifold::P32)?;
            for q in [-1i8, 0, 1] {
                let entries: Vec<(usize, usize, f64)> = channels
                    .iter()
                    .filter(|ch| ch.q == q)
                    .map(|ch| (ch.lower.index(), ch.upper.index(), ch.cgc))
                    .collect();
                if !entries.is_empty() {
                    jumps.push(JumpOp { target, q, rate_per_ns: gamma * branch, entries });
                }
            }
        }

        // Detection operator: M = Σ_{qq′} W[q′,q]·C_q†C_q′ over the 393-nm
        // channels, so that Γ·β_S·η·Tr[ρM] is the click rate.
        let w = sc.collection.overlap()?;
        let mut detection = DMatrix::<C64>::zeros(n, n);
        let s_channels = channel_table(Manifold::S12, Manifold::P32)?;
        for ca in &s_channels {
            for cb in &s_channels {
                if ca.lower == cb.lower {
                    detection[(ca.upper.index(), cb.upper.index())] +=
                        w[(q_index(cb.q), q_index(ca.q))] * (ca.cgc * cb.cgc);
                }
            }
        }
        let flux_scale = gamma * sc.decay.branch_s12 * sc.collection.efficiency;

        Ok(Generator {
            h_static,
            drive_entries,
            envelope: sc.drive.envelope,
            jumps,
            gamma,
            detection,
            flux_scale,
            background: sc.imperfections.background_rate_per_ns,
            detuning_mhz: delta,
        })
    }

    pub fn detuning_mhz(&self) -> f64 {
        self.detuning_mhz
    }

    pub fn jumps(&self) -> &[JumpOp] {
        &self.jumps
    }

    pub fn h_static(&self) -> &DMatrix<C64> {
        &self.h_static
    }

    pub fn drive_entries(&self) -> &[(usize, usize, C64)] {
        &self.drive_entries
    }

    pub fn envelope(&self) -> &PulseEnvelope {
        &self.envelope
    }

    pub fn gamma_rad_per_ns(&self) -> f64 {
        self.gamma
    }

    pub fn detection_matrix(&self) -> &DMatrix<C64> {
        &self.detection
    }

    pub fn flux_scale(&self) -> f64 {
        self.flux_scale
    }

    pub fn background_rate(&self) -> f64 {
        self.background
    }

    fn scratch(&self) -> Scratch {
        let n = NUM_LEVELS;
        Scratch { h: DMatrix::zeros(n, n), hr: DMatrix::zeros(n, n) }
    }

    fn rhs_into(&self, t: f64, y: &DVector<C64>, scratch: &mut Scratch, dy: &mut DVector<C64>) {
        let n = NUM_LEVELS;
        let r = DMatrixView::from_slice(y.as_slice(), n, n);

        scratch.h.copy_from(&self.h_static);
        if !self.drive_entries.is_empty() {
            let env = self.envelope.value(t);
            if env != 0.0 {
                let env = C64::new(env, 0.0);
                for &(i, j, g) in &self.drive_entries {
                    scratch.h[(i, j)] += g * env;
                }
            }
        }

        // dy = −i(HR − RH)
        let mut out = DMatrixViewMut::from_slice(dy.as_mut_slice(), n, n);
        scratch.hr.gemm(C64::new(1.0, 0.0), &scratch.h, &r, C64::new(0.0, 0.0));
        out.copy_from(&scratch.hr);
        out *= C64::new(0.0, -1.0);
        out.gemm(C64::new(0.0, 1.0), &r, &scratch.h, C64::new(1.0, 0.0));

        // −½{ΣL†L, ρ} with ΣL†L = Γ·(P₃/₂ projector)
        let p = Manifold::P32.base_index();
        let half_gamma = C64::new(0.5 * self.gamma, 0.0);
        for i in p..p + Manifold::P32.multiplicity() {
            for j in 0..n {
                out[(i, j)] -= half_gamma * r[(i, j)];
                out[(j, i)] -= half_gamma * r[(j, i)];
            }
        }

        // feeding terms Σ LρL†
        for jump in &self.jumps {
            let rate = jump.rate_per_ns;
            for &(i, u, a) in &jump.entries {
                for &(j, v, b) in &jump.entries {
                    out[(i, j)] += C64::new(rate * a * b, 0.0) * r[(u, v)];
                }
            }
        }
    }

    /// Integration boundaries: envelope knots inside (t0, t_end).
    pub(crate) fn segment_bounds(&self, t0: f64, t_end: f64) -> Vec<f64> {
        let mut bounds = vec![t0];
        let mut ks: Vec<f64> = self.envelope.knots().into_iter().collect();
        ks.sort_by(f64::total_cmp);
        for k in ks {
            if k > t0 + 1e-12 && k < t_end - 1e-12 && (k - bounds[bounds.len() - 1]).abs() > 1e-12 {
                bounds.push(k);
            }
        }
        bounds.push(t_end);
        bounds
    }

    /// Evolve ρ₀ from t = 0 and return the states at the requested times.
    pub fn evolve(&self, rho0: &DMatrix<C64>, times: &[f64]) -> Result<Evolution> {
        if times.is_empty() {
            return Err(Error::domain("no output times requested"));
        }
        for w in times.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::domain("output times must be strictly ascending"));
            }
        }
        if times[0] < 0.0 {
            return Err(Error::domain("output times must be ≥ 0"));
        }
        let t_end = times[times.len() - 1];
        let solver = Dopri5::default();
        let mut scratch = self.scratch();
        let mut y = DVector::from_column_slice(rho0.as_slice());
        let mut states: Vec<DMatrix<C64>> = Vec::with_capacity(times.len());
        let mut idx = 0;
        let bounds = self.segment_bounds(0.0, t_end);
        for seg in bounds.windows(2) {
            let (s, e) = (seg[0], seg[1]);
            y = solver.solve(
                |t, y, dy| self.rhs_into(t, y, &mut scratch, dy),
                s,
                e,
                y,
                |dense| {
                    while idx < times.len() && times[idx] <= dense.t_end() + 1e-12 {
                        let v = dense.eval(times[idx]);
                        states.push(DMatrix::from_column_slice(NUM_LEVELS, NUM_LEVELS, v.as_slice()));
                        idx += 1;
                    }
                },
            )?;
        }
        while idx < times.len() {
            states.push(DMatrix::from_column_slice(NUM_LEVELS, NUM_LEVELS, y.as_slice()));
            idx += 1;
        }
        Ok(Evolution { times: times.to_vec(), states })
    }

    /// Evolve ρ₀ from t = 0 to `t_end` and return only the final state.
    pub fn solve_to(&self, rho0: &DMatrix<C64>, t_end: f64) -> Result<DMatrix<C64>> {
        let solver = Dopri5::default();
        let mut scratch = self.scratch();
        let mut y = DVector::from_column_slice(rho0.as_slice());
        for seg in self.segment_bounds(0.0, t_end).windows(2) {
            y = solver.solve(
                |t, y, dy| self.rhs_into(t, y, &mut scratch, dy),
                seg[0],
                seg[1],
                y,
                |_| {},
            )?;
        }
        Ok(DMatrix::from_column_slice(NUM_LEVELS, NUM_LEVELS, y.as_slice()))
    }

    /// Detector click rate (per ns) for a given state, including the flat
    /// background; clamped at zero against integrator rounding.
    pub fn flux_of(&self, rho: &DMatrix<C64>) -> f64 {
        let p = Manifold::P32.base_index();
        let mut tr = C64::new(0.0, 0.0);
        for i in p..p + Manifold::P32.multiplicity() {
            for j in p..p + Manifold::P32.multiplicity() {
                tr += rho[(i, j)] * self.detection[(j, i)];
            }
        }
        (self.flux_scale * tr.re + self.background).max(0.0)
    }

    pub fn flux_curve(&self, evo: &Evolution) -> Vec<f64> {
        evo.states.iter().map(|rho| self.flux_of(rho)).collect()
    }
}

/// Density matrices on an output time grid.
pub struct Evolution {
    pub times: Vec<f64>,
    pub states: Vec<DMatrix<C64>>,
}

impl Evolution {
    /// Total population of one manifold over time.
    pub fn manifold_population(&self, m: Manifold) -> Vec<f64> {
        let base = m.base_index();
        self.states
            .iter()
            .map(|rho| (base..base + m.multiplicity()).map(|i| rho[(i, i)].re).sum())
            .collect()
    }

    pub fn population(&self, level_index: usize) -> Vec<f64> {
        self.states.iter().map(|rho| rho[(level_index, level_index)].re).collect()
    }

    /// Worst-case invariant residuals over all stored states.
    pub fn worst_invariants(&self) -> StateInvariants {
        let mut worst = StateInvariants {
            trace_deviation: 0.0,
            hermiticity: 0.0,
            min_eigenvalue: f64::INFINITY,
        };
        for rho in &self.states {
            let inv = state_invariants(rho);
            worst.trace_deviation = worst.trace_deviation.max(inv.trace_deviation);
            worst.hermiticity = worst.hermiticity.max(inv.hermiticity);
            worst.min_eigenvalue = worst.min_eigenvalue.min(inv.min_eigenvalue);
        }
        worst
    }
}

/// Health metrics of a density matrix.
#[derive(Debug, Clone, Copy)]
pub struct StateInvariants {
    /// |Tr ρ − 1|
    pub trace_deviation: f64,
    /// max |ρ − ρ†| entry
    pub hermiticity: f64,
    /// smallest eigenvalue of the Hermitian part
    pub min_eigenvalue: f64,
}

pub fn state_invariants(rho: &DMatrix<C64>) -> StateInvariants {
    let trace_deviation = (rho.trace() - C64::new(1.0, 0.0)).norm();
    let adj = rho.adjoint();
    let hermiticity = (rho - &adj).iter().map(|z| z.norm()).fold(0.0, f64::max);
    let herm_part = (rho + adj) * C64::new(0.5, 0.0);
    let eig = herm_part.symmetric_eigen();
    let min_eigenvalue = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    StateInvariants { trace_deviation, hermiticity, min_eigenvalue }
}

/// Density matrix of the scenario's prepared state: the coherent
/// superposition (with preparation-fidelity admixture of the orthogonal
/// state), or the plain two-level mixture when `initial_coherent` is false.
pub fn initial_density(sc: &Scenario) -> Result<DMatrix<C64>> {
    sc.imperfections.validate()?;
    let n = NUM_LEVELS;
    let s = &sc.initial;
    let (ia, ib) = (s.level_a().index(), s.level_b().index());
    let mut rho = DMatrix::<C64>::zeros(n, n);
    if !sc.initial_coherent {
        rho[(ia, ia)] = C64::new(s.rho1(), 0.0);
        rho[(ib, ib)] = C64::new(s.rho2(), 0.0);
        return Ok(rho);
    }
    let phase = C64::new(0.0, s.phi_d0()).exp();
    let (ca, cb) = (s.rho1().sqrt(), s.rho2().sqrt());
    let fid = sc.imperfections.preparation_fidelity;
    let mut add_pure = |amp_a: C64, amp_b: C64, weight: f64| {
        let w = C64::new(weight, 0.0);
        rho[(ia, ia)] += w * amp_a * amp_a.conj();
        rho[(ia, ib)] += w * amp_a * amp_b.conj();
        rho[(ib, ia)] += w * amp_b * amp_a.conj();
        rho[(ib, ib)] += w * amp_b * amp_b.conj();
    };
    add_pure(C64::new(ca, 0.0), phase * cb, fid);
    if fid < 1.0 {
        add_pure(C64::new(cb, 0.0), -phase * ca, 1.0 - fid);
    }
    Ok(rho)
}

/// Build the evolution generator for a scenario.
pub fn build_generator(sc: &Scenario) -> Result<Generator> {
    Generator::new(sc)
}

/// Evolve the scenario's own initial state over its time grid.
pub fn evolve(sc: &Scenario) -> Result<Evolution> {
    let generator = Generator::new(sc)?;
    let rho0 = initial_density(sc)?;
    generator.evolve(&rho0, &sc.grid.times())
}

/// Evolve a caller-supplied initial state over the scenario's time grid.
pub fn evolve_from(sc: &Scenario, rho0: &DMatrix<C64>) -> Result<Evolution> {
    Generator::new(sc)?.evolve(rho0, &sc.grid.times())
}

/// Arrival-time distribution (clicks per ns per trigger) of an evolution.
pub fn detection_flux(sc: &Scenario, evo: &Evolution) -> Result<Vec<f64>> {
    Ok(Generator::new(sc)?.flux_curve(evo))
}

/// x/y pairs of a parameter scan.
#[derive(Debug, Clone)]
pub struct ScanCurve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Remaining D₅/₂ population after driving with pulses of the given nominal
/// lengths (each run includes [`DEPLETION_SETTLE_NS`] of drive-off settling
/// before readout).
pub fn depletion_scan(sc: &Scenario, pulse_lengths_ns: &[f64]) -> Result<ScanCurve> {
    for w in pulse_lengths_ns.windows(2) {
        if w[1] < w[0] {
            return Err(Error::domain("pulse lengths must be ascending"));
        }
    }
    if pulse_lengths_ns.iter().any(|&l| l < 0.0 || !l.is_finite()) {
        return Err(Error::domain("pulse lengths must be finite and ≥ 0"));
    }
    let y: Vec<f64> = pulse_lengths_ns
        .par_iter()
        .map(|&len| -> Result<f64> {
            let mut sc2 = sc.clone();
            sc2.drive.envelope.duration_ns = len;
            let generator = Generator::new(&sc2)?;
            let rho0 = initial_density(&sc2)?;
            let t_meas = sc2.drive.envelope.support_end() + DEPLETION_SETTLE_NS;
            let rho = generator.solve_to(&rho0, t_meas)?;
            let base = Manifold::D52.base_index();
            Ok((base..base + Manifold::D52.multiplicity()).map(|i| rho[(i, i)].re).sum())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ScanCurve { x: pulse_lengths_ns.to_vec(), y })
}

/// What a phase scan measures at each prepared phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseScanMode {
    /// Total detection probability over the scenario window (photon side).
    IntegratedFlux,
    /// Remaining D₅/₂ population after the configured pulse (atom side).
    DepletionAtFixedPulse,
}

/// Scan the prepared phase Φ_D(0) and measure either the integrated detected
/// flux or the remaining D₅/₂ population.
pub fn phase_scan(sc: &Scenario, phi_values: &[f64], mode: PhaseScanMode) -> Result<ScanCurve> {
    if phi_values.is_empty() {
        return Err(Error::domain("phase scan needs at least one phase"));
    }
    let y: Vec<f64> = phi_values
        .par_iter()
        .map(|&phi| -> Result<f64> {
            let mut sc2 = sc.clone();
            sc2.initial = sc.initial.with_phi_d0(phi);
            match mode {
                PhaseScanMode::IntegratedFlux => {
                    let generator = Generator::new(&sc2)?;
                    let rho0 = initial_density(&sc2)?;
                    let times = sc2.grid.times();
                    let evo = generator.evolve(&rho0, &times)?;
                    let flux = generator.flux_curve(&evo);
                    Ok(integrate_uniform(&flux, sc2.grid.step_ns))
                }
                PhaseScanMode::DepletionAtFixedPulse => {
                    let generator = Generator::new(&sc2)?;
                    let rho0 = initial_density(&sc2)?;
                    let t_meas = sc2.drive.envelope.support_end() + DEPLETION_SETTLE_NS;
                    let rho = generator.solve_to(&rho0, t_meas)?;
                    let base = Manifold::D52.base_index();
                    Ok((base..base + Manifold::D52.multiplicity()).map(|i| rho[(i, i)].re).sum())
                }
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ScanCurve { x: phi_values.to_vec(), y })
}

/// Composite Simpson integration of uniform samples (trapezoid on a trailing
/// odd interval).
pub fn integrate_uniform(y: &[f64], h: f64) -> f64 {
    if y.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut i = 0;
    while i + 2 < y.len() {
        total += h / 3.0 * (y[i] + 4.0 * y[i + 1] + y[i + 2]);
        i += 2;
    }
    if i + 1 < y.len() {
        total += 0.5 * h * (y[i] + y[i + 1]);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amplitude::{closed_form_beat, wrap_angle};
    use crate::geometry::{Analyzer, collection_visibility};
    use approx::assert_abs_diff_eq;

    fn scenario(scheme: Scheme, b_gauss: f64, rabi_mhz: f64) -> Scenario {
        Scenario {
            scheme,
            zeeman: ZeemanConfig::new(b_gauss).unwrap(),
            initial: scheme.canonical_superposition(0.0),
            initial_coherent: true,
            drive: LaserDrive {
                rabi_mhz,
                detuning_mhz: None,
                polarization: PhotonPolarization::D,
                envelope: PulseEnvelope { t_on_ns: 0.0, duration_ns: 5000.0, rise_ns: 40.0 },
            },
            collection: CollectionGeometry::new(0.4, scheme.analyzer(), 1.0).unwrap(),
            decay: DecayConfig::default(),
            grid: TimeGrid::new(600.0, 2.0),
            imperfections: Imperfections::default(),
        }
    }

    /// Projection of f(t) = K(1+V cos(ωt+φ)) sampled over whole periods onto
    /// the quadratures at ω: returns (φ, V).
    fn project_beat(times: &[f64], values: &[f64], nu_mhz: f64) -> (f64, f64) {
        let omega = 2.0 * std::f64::consts::PI * nu_mhz * 1e-3;
        let h = times[1] - times[0];
        let c: Vec<f64> =
            times.iter().zip(values).map(|(&t, &f)| f * (omega * t).cos()).collect();
        let s: Vec<f64> =
            times.iter().zip(values).map(|(&t, &f)| f * (omega * t).sin()).collect();
        let span = times[times.len() - 1] - times[0];
        let mean = integrate_uniform(values, h) / span;
        let ci = integrate_uniform(&c, h);
        let si = integrate_uniform(&s, h);
        let phase = (-si).atan2(ci);
        let contrast = 2.0 * (ci * ci + si * si).sqrt() / (mean * span);
        (phase, contrast)
    }

    fn beat_window(sc: &Scenario, t_start: f64, periods: usize, per_period: usize) -> Vec<f64> {
        let nu = sc.initial.beat_frequency_mhz(&sc.zeeman).abs();
        let t_period = 1000.0 / nu;
        let h = t_period / per_period as f64;
        (0..=periods * per_period).map(|k| t_start + k as f64 * h).collect()
    }

    #[test]
    fn envelope_shape_and_support() {
        let env = PulseEnvelope { t_on_ns: 10.0, duration_ns: 100.0, rise_ns: 20.0 };
        assert_eq!(env.value(0.0), 0.0);
        assert_eq!(env.value(10.0), 0.0);
        assert_abs_diff_eq!(env.value(20.0), 0.5, epsilon = 1e-12);
        assert_eq!(env.value(40.0), 1.0);
        assert_eq!(env.value(109.9), 1.0);
        assert_abs_diff_eq!(env.value(120.0), 0.5, epsilon = 1e-12);
        assert_eq!(env.value(130.0), 0.0);
        assert_eq!(env.support_end(), 130.0);
        // zero-length pulse means no drive at all
        let none = PulseEnvelope { t_on_ns: 10.0, duration_ns: 0.0, rise_ns: 20.0 };
        for t in [0.0, 15.0, 30.0, 100.0] {
            assert_eq!(none.value(t), 0.0);
        }
        // pulse cut mid-rise stays continuous and bounded
        let cut = PulseEnvelope { t_on_ns: 0.0, duration_ns: 8.0, rise_ns: 20.0 };
        for k in 0..=300 {
            let v = cut.value(k as f64 * 0.1);
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn drive_off_keeps_d52_block_rotating_rigidly() {
        let mut sc = scenario(Scheme::Lambda, 2.798, 0.0);
        sc.drive.envelope.duration_ns = 0.0;
        let generator = Generator::new(&sc).unwrap();
        let rho0 = initial_density(&sc).unwrap();
        let t = 317.0;
        let evo = generator.evolve(&rho0, &[t]).unwrap();
        let rho = &evo.states[0];
        let (ia, ib) = (sc.initial.level_a().index(), sc.initial.level_b().index());
        assert_abs_diff_eq!(rho[(ia, ia)].re, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(rho[(ib, ib)].re, 0.5, epsilon = 1e-9);
        // coherence ρ_ab advances as e^{−i2πν t} (tolerance covers the
        // integrator's accumulated global error; a sign mistake would be O(1))
        let nu = sc.initial.beat_frequency_mhz(&sc.zeeman);
        let expected = rho0[(ia, ib)]
            * (C64::new(0.0, -2.0 * std::f64::consts::PI * nu * 1e-3 * t)).exp();
        let dev = (rho[(ia, ib)] - expected).norm();
        assert!(dev < 1e-6, "coherence {} vs expected {}", rho[(ia, ib)], expected);
        assert_eq!(generator.flux_of(rho), 0.0);
    }

    #[test]
    fn invariants_hold_under_strong_drive() {
        let mut sc = scenario(Scheme::Lambda, 2.798, 10.0);
        sc.grid = TimeGrid::new(500.0, 2.0);
        let evo = evolve(&sc).unwrap();
        let inv = evo.worst_invariants();
        assert!(inv.trace_deviation < 1e-9, "trace deviation {}", inv.trace_deviation);
        assert!(inv.hermiticity < 1e-10, "hermiticity {}", inv.hermiticity);
        assert!(inv.min_eigenvalue > -1e-9, "min eigenvalue {}", inv.min_eigenvalue);
    }

    #[test]
    fn excitation_rates_balance_at_auto_detuning() {
        let sc = scenario(Scheme::Lambda, 2.798, 1.0);
        let generator = Generator::new(&sc).unwrap();
        let delta = generator.detuning_mhz();
        let (ch1, ch2) = sc.scheme.channels();
        let mut rates = Vec::new();
        for (ch, pop) in [(ch1, sc.initial.rho1()), (ch2, sc.initial.rho2())] {
            let g = generator
                .drive_entries()
                .iter()
                .find(|&&(u, l, _)| u == ch.upper.index() && l == ch.lower.index())
                .map(|&(_, _, g)| g)
                .expect("drive entry for scheme channel");
            let resp =
                crate::amplitude::lorentzian_response(&ch, delta, sc.decay.gamma_p32_mhz, &sc.zeeman)
                    .unwrap();
            // |g|² already carries the CGC; divide it out of the response so
            // the Lorentzian factor is not double-counted
            rates.push(pop * g.norm_sqr() * (resp.norm() / ch.cgc.abs()).powi(2));
        }
        assert!(
            (rates[0] - rates[1]).abs() <= 1e-6 * rates[0].abs(),
            "rates {} vs {}",
            rates[0],
            rates[1]
        );
    }

    #[test]
    fn weak_drive_lambda_flux_matches_closed_form() {
        let sc = scenario(Scheme::Lambda, 2.798, 0.4);
        let generator = Generator::new(&sc).unwrap();
        let rho0 = initial_density(&sc).unwrap();
        let times = beat_window(&sc, 250.0, 2, 64);
        let evo = generator.evolve(&rho0, &times).unwrap();
        let flux = generator.flux_curve(&evo);
        assert!(flux.iter().all(|&f| f >= 0.0));
        let beat = closed_form_beat(
            sc.scheme,
            &sc.initial,
            sc.drive.polarization,
            generator.detuning_mhz(),
            sc.decay.gamma_p32_mhz,
            &sc.zeeman,
        )
        .unwrap();
        let (phase, contrast) = project_beat(&times, &flux, beat.nu_mhz);
        let dphi = wrap_angle(phase - beat.phase).abs();
        assert!(dphi < 1f64.to_radians(), "phase offset {}°", dphi.to_degrees());
        assert!((contrast - beat.contrast).abs() < 0.01, "contrast {contrast} vs {}", beat.contrast);
        assert!(beat.contrast > 0.999, "balanced scheme should have unit contrast");
    }

    #[test]
    fn weak_drive_v_flux_matches_closed_form_with_aperture_contrast() {
        let mut sc = scenario(Scheme::V, 2.798, 0.4);
        sc.collection = CollectionGeometry::new(0.1, Analyzer::V, 1.0).unwrap();
        let generator = Generator::new(&sc).unwrap();
        let rho0 = initial_density(&sc).unwrap();
        let times = beat_window(&sc, 250.0, 2, 64);
        let evo = generator.evolve(&rho0, &times).unwrap();
        let flux = generator.flux_curve(&evo);
        let beat = closed_form_beat(
            sc.scheme,
            &sc.initial,
            sc.drive.polarization,
            generator.detuning_mhz(),
            sc.decay.gamma_p32_mhz,
            &sc.zeeman,
        )
        .unwrap();
        let (phase, contrast) = project_beat(&times, &flux, beat.nu_mhz);
        let dphi = wrap_angle(phase - beat.phase).abs();
        assert!(dphi < 1f64.to_radians(), "phase offset {}°", dphi.to_degrees());
        let v_cone = collection_visibility(Scheme::V, 0.1).unwrap();
        assert!(
            (contrast - beat.contrast * v_cone).abs() < 0.01,
            "contrast {contrast} vs {} × {v_cone}",
            beat.contrast
        );
    }

    #[test]
    fn lambda_p_population_oscillates_and_v_does_not() {
        // Λ: both channels feed P₃/₂[m=−1/2]; its population beats at ν_L.
        let sc = scenario(Scheme::Lambda, 2.798, 1.0);
        let generator = Generator::new(&sc).unwrap();
        let rho0 = initial_density(&sc).unwrap();
        let times = beat_window(&sc, 200.0, 2, 32);
        let evo = generator.evolve(&rho0, &times).unwrap();
        let p_pop = evo.population(Sublevel::new(Manifold::P32, -1).unwrap().index());
        let max = p_pop.iter().cloned().fold(0.0, f64::max);
        let min = p_pop.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            (max - min) / (max + min) > 0.9,
            "Λ upper-level modulation {}",
            (max - min) / (max + min)
        );

        // V: the two channels feed different P₃/₂ levels; populations add
        // incoherently, so total P₃/₂ stays smooth.
        let sc = scenario(Scheme::V, 2.798, 1.0);
        let generator = Generator::new(&sc).unwrap();
        let rho0 = initial_density(&sc).unwrap();
        let times = beat_window(&sc, 200.0, 2, 32);
        let evo = generator.evolve(&rho0, &times).unwrap();
        let p_pop = evo.manifold_population(Manifold::P32);
        let max = p_pop.iter().cloned().fold(0.0, f64::max);
        let min = p_pop.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            (max - min) / (max + min) < 0.01,
            "V upper-manifold modulation {}",
            (max - min) / (max + min)
        );
    }

    #[test]
    fn mixture_flux_is_average_of_pure_phases() {
        let mut sc = scenario(Scheme::Lambda, 2.798, 2.0);
        sc.grid = TimeGrid::new(300.0, 2.0);
        let generator = Generator::new(&sc).unwrap();
        let times = sc.grid.times();

        let mut sc_mix = sc.clone();
        sc_mix.initial_coherent = false;
        let flux_mix =
            generator.flux_curve(&generator.evolve(&initial_density(&sc_mix).unwrap(), &times).unwrap());

        let mut fluxes = Vec::new();
        for phi in [0.0, std::f64::consts::PI] {
            let mut sc_p = sc.clone();
            sc_p.initial = sc.initial.with_phi_d0(phi);
            let f = generator
                .flux_curve(&generator.evolve(&initial_density(&sc_p).unwrap(), &times).unwrap());
            fluxes.push(f);
        }
        let scale = flux_mix.iter().cloned().fold(0.0, f64::max);
        for i in 0..times.len() {
            let avg = 0.5 * (fluxes[0][i] + fluxes[1][i]);
            assert!(
                (flux_mix[i] - avg).abs() < 1e-6 * scale,
                "linearity violated at t={}",
                times[i]
            );
        }
    }

    #[test]
    fn population_loss_equals_integrated_decay_flux() {
        let mut sc = scenario(Scheme::Lambda, 2.798, 6.0);
        sc.grid = TimeGrid { t_max_ns: 300.0, step_ns: 0.25, bin_ns: 2.0 };
        let generator = Generator::new(&sc).unwrap();
        let rho0 = initial_density(&sc).unwrap();
        let times = sc.grid.times();
        let evo = generator.evolve(&rho0, &times).unwrap();
        let d_pop = evo.manifold_population(Manifold::D52);
        let p_pop = evo.manifold_population(Manifold::P32);
        let lost = (d_pop[0] + p_pop[0]) - (d_pop[d_pop.len() - 1] + p_pop[p_pop.len() - 1]);
        let leak_rate = generator.gamma_rad_per_ns() * (sc.decay.branch_s12 + sc.decay.branch_d32);
        let leaked: Vec<f64> = p_pop.iter().map(|&p| leak_rate * p).collect();
        let integral = integrate_uniform(&leaked, sc.grid.step_ns);
        assert!(
            (lost - integral).abs() < 1e-6,
            "D+P loss {lost} vs integrated decay flux {integral}"
        );
        assert!(lost > 0.05, "scenario should deplete noticeably, lost {lost}");
    }

    #[test]
    fn depletion_zero_pulse_keeps_population() {
        let sc = scenario(Scheme::Lambda, 2.798, 8.0);
        let curve = depletion_scan(&sc, &[0.0]).unwrap();
        assert_abs_diff_eq!(curve.y[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn depletion_scan_stairs_for_lambda_smooth_for_v() {
        let lengths: Vec<f64> = (0..=20).map(|k| k as f64 * 12.5).collect();
        let sc = scenario(Scheme::Lambda, 2.798, 8.0);
        let lambda = depletion_scan(&sc, &lengths).unwrap();
        let sc = scenario(Scheme::V, 2.798, 8.0);
        let v = depletion_scan(&sc, &lengths).unwrap();

        let steps = |c: &ScanCurve| -> Vec<f64> {
            c.y.windows(2).map(|w| w[0] - w[1]).collect()
        };
        let (sl, sv) = (steps(&lambda), steps(&v));
        assert!(sl.iter().all(|&s| s > -1e-6) && sv.iter().all(|&s| s > -1e-6));
        // Λ alternates between plateaus (dark phase) and drops (bright
        // phase); V depletes at a steady rate. Compare adjacent steps past
        // the rise-truncated first pulses, where slow decay is divided out.
        let adjacent_swing = |s: &[f64]| {
            s[3..]
                .windows(2)
                .map(|w| (w[1] - w[0]).abs() / w[0].max(w[1]))
                .fold(0.0, f64::max)
        };
        assert!(adjacent_swing(&sl) > 0.5, "Λ steps too uniform: {:?}", sl);
        assert!(adjacent_swing(&sv) < 0.15, "V steps too modulated: {:?}", sv);
        // both end depleted relative to start
        assert!(lambda.y[lengths.len() - 1] < 0.8 * lambda.y[0]);
        assert!(v.y[lengths.len() - 1] < 0.8 * v.y[0]);
    }

    #[test]
    fn short_pulse_phase_scan_modulates_integrated_flux() {
        let mut sc = scenario(Scheme::Lambda, 0.5366, 8.0);
        // at this small field the Zeeman splitting (≈1.8 MHz) is far below Γ,
        // so no detuning can balance the CGC-imbalanced channels — drive on
        // the line center instead
        sc.drive.detuning_mhz = Some(0.0);
        sc.drive.envelope = PulseEnvelope { t_on_ns: 0.0, duration_ns: 40.0, rise_ns: 30.0 };
        sc.grid = TimeGrid::new(250.0, 2.0);
        let phis: Vec<f64> =
            (0..8).map(|k| k as f64 / 8.0 * 2.0 * std::f64::consts::PI).collect();
        let curve = phase_scan(&sc, &phis, PhaseScanMode::IntegratedFlux).unwrap();
        let max = curve.y.iter().cloned().fold(0.0, f64::max);
        let min = curve.y.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min > 2.0, "short-pulse modulation ratio {}", max / min);
    }

    #[test]
    fn preparation_infidelity_reduces_contrast() {
        let mut sc = scenario(Scheme::Lambda, 2.798, 0.4);
        sc.imperfections.preparation_fidelity = 0.9;
        let generator = Generator::new(&sc).unwrap();
        let rho0 = initial_density(&sc).unwrap();
        let inv = state_invariants(&rho0);
        assert!(inv.trace_deviation < 1e-12 && inv.min_eigenvalue > -1e-12);
        let times = beat_window(&sc, 250.0, 2, 64);
        let evo = generator.evolve(&rho0, &times).unwrap();
        let flux = generator.flux_curve(&evo);
        let nu = sc.initial.beat_frequency_mhz(&sc.zeeman);
        let (_, contrast) = project_beat(&times, &flux, nu);
        // F and 1−F beat in antiphase: contrast = 2F−1
        assert_abs_diff_eq!(contrast, 0.8, epsilon = 0.01);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut sc = scenario(Scheme::Lambda, 2.798, 1.0);
        sc.decay.branch_s12 = 0.5;
        assert!(Generator::new(&sc).is_err());
        let mut sc = scenario(Scheme::Lambda, 2.798, 1.0);
        sc.drive.rabi_mhz = -1.0;
        assert!(Generator::new(&sc).is_err());
        let mut sc = scenario(Scheme::Lambda, 2.798, 1.0);
        sc.grid.bin_ns = 0.5; // below step
        assert!(Generator::new(&sc).is_err());
        let mut sc = scenario(Scheme::Lambda, 2.798, 1.0);
        sc.imperfections.preparation_fidelity = 1.5;
        assert!(Generator::new(&sc).is_err());
    }

    #[test]
    fn simpson_integration_is_exact_for_cubics() {
        let h = 0.1;
        let y: Vec<f64> = (0..=100).map(|i| {
            let x = i as f64 * h;
            x * x * x - 2.0 * x + 1.0
        }).collect();
        let exact = {
            let x = 10.0f64;
            x.powi(4) / 4.0 - x * x + x
        };
        assert_abs_diff_eq!(integrate_uniform(&y, h), exact, epsilon = 1e-9);
    }
}
