//! Monte Carlo quantum-trajectory sampling of detector clicks.
//!
//! Between quantum jumps the conditional wave function lives entirely in the
//! ten levels that the 854-nm drive connects (D5/2 and P3/2), evolving under
//! the non-Hermitian `H − (i/2)Γ P_P32`. Its squared norm is the survival
//! probability, so a jump happens when the norm crosses a uniform draw. A
//! jump branches by the decay fractions: decays to S1/2 or D3/2 leave the
//! ion dark for the rest of the sequence (at most one 393-nm photon per
//! trigger), while 854-nm decays return it to D5/2 and evolution continues.
//! On an S-branch jump the photon reaches the detector with probability
//! η·⟨ψ|M|ψ⟩/⟨ψ|P_P|ψ⟩, where `M` is the analyzer-projected collection
//! operator shared with the ensemble solver — this is what makes the click
//! statistics agree with the master-equation flux.
//!
//! Each trigger draws from its own counter-derived RNG stream, so results
//! are independent of thread scheduling and of how many triggers run in one
//! call.

use nalgebra::{SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::atomic::Manifold;
use crate::master::{build_generator, PulseEnvelope, Scenario};
use crate::timetag::{Channel, ClickRecord};
use crate::{C64, Error, Result};

const DIM: usize = 10;
type V10 = SVector<C64, DIM>;
type M10 = SMatrix<C64, DIM, DIM>;

/// Levels reachable while the drive is on: D5/2 (0..6) then P3/2 (6..10).
fn active_index(global: usize) -> Option<usize> {
    match global {
        6..=11 => Some(global - 6),
        14..=17 => Some(global - 8),
        _ => None,
    }
}

const P_START: usize = 6;

/// Cell width of the precomputed propagator table, ns.
const CELL_NS: f64 = 0.5;
/// Substep for direct integration inside a cell, ns.
const SUB_NS: f64 = 0.125;
/// Below this excited-state amplitude (squared) after the pulse, no further
/// jump can occur and the trigger is finished.
const QUIET_P_NORM2: f64 = 1e-18;

/// Transit-time spread of the photomultiplier: σ for a 300 ps FWHM.
pub const DEFAULT_PMT_SIGMA_PS: f64 = 300.0 / 2.355;

#[derive(Debug, Clone, Copy)]
pub struct SamplerOptions {
    /// Gaussian timing jitter applied to every click, picoseconds.
    pub pmt_sigma_ps: f64,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions { pmt_sigma_ps: DEFAULT_PMT_SIGMA_PS }
    }
}

/// Simulate `n_triggers` sequence repetitions and return every click, sorted
/// by trigger and timestamp. Identical (seed, trigger) pairs give identical
/// records no matter how the work is batched or scheduled.
pub fn sample_clicks(sc: &Scenario, n_triggers: u64, seed: u64) -> Result<Vec<ClickRecord>> {
    sample_clicks_with(sc, n_triggers, seed, &SamplerOptions::default())
}

pub fn sample_clicks_with(
    sc: &Scenario,
    n_triggers: u64,
    seed: u64,
    opts: &SamplerOptions,
) -> Result<Vec<ClickRecord>> {
    if !(opts.pmt_sigma_ps >= 0.0) {
        return Err(Error::config("pmt_sigma_ps must be ≥ 0".to_string()));
    }
    let sampler = TrajectorySampler::new(sc)?;
    let per_trigger: Vec<Vec<ClickRecord>> = (0..n_triggers)
        .into_par_iter()
        .map(|trigger| sampler.run_trigger(trigger, seed, opts))
        .collect();
    Ok(per_trigger.into_iter().flatten().collect())
}

struct RepumpOp {
    /// (D5/2 active index, P3/2 active index, coupling) triples.
    entries: Vec<(usize, usize, f64)>,
}

struct TrajectorySampler {
    /// dψ/dt = (g0 + env(t)·gd) ψ
    g0: M10,
    gd: M10,
    envelope: PulseEnvelope,
    cells: Vec<Cell>,
    /// Collection operator on the P3/2 block.
    det_m: SMatrix<C64, 4, 4>,
    eta: f64,
    beta_s: f64,
    beta_d3: f64,
    repump: Vec<RepumpOp>,
    background_per_ns: f64,
    t_max_ns: f64,
    support_end_ns: f64,
    init: InitialDraw,
}

struct Cell {
    t0: f64,
    dt: f64,
    u: M10,
}

struct InitialDraw {
    ia: usize,
    ib: usize,
    amp_a: f64,
    amp_b: f64,
    phase: C64,
    coherent: bool,
    fidelity: f64,
    rho1: f64,
}

impl TrajectorySampler {
    fn new(sc: &Scenario) -> Result<Self> {
        let gen = build_generator(sc)?;
        let gamma = gen.gamma_rad_per_ns();

        let mut h0 = M10::zeros();
        let hs = gen.h_static();
        for i in 0..crate::atomic::NUM_LEVELS {
            if let Some(a) = active_index(i) {
                h0[(a, a)] = hs[(i, i)];
            }
        }
        for a in P_START..DIM {
            h0[(a, a)] -= C64::new(0.0, 0.5 * gamma);
        }
        let mut hd = M10::zeros();
        for &(i, j, amp) in gen.drive_entries() {
            let (a, b) = match (active_index(i), active_index(j)) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::domain("drive couples outside the D5/2–P3/2 block")),
            };
            hd[(a, b)] += amp;
        }
        let mi = C64::new(0.0, -1.0);
        let g0 = h0.map(|z| mi * z);
        let gd = hd.map(|z| mi * z);

        let mut det_m = SMatrix::<C64, 4, 4>::zeros();
        let dm = gen.detection_matrix();
        for i in 14..18 {
            for j in 14..18 {
                det_m[(i - 14, j - 14)] = dm[(i, j)];
            }
        }

        let mut repump = Vec::new();
        for op in gen.jumps() {
            if op.target != Manifold::D52 {
                continue;
            }
            let entries = op
                .entries
                .iter()
                .map(|&(lo, up, c)| (active_index(lo).unwrap(), active_index(up).unwrap(), c))
                .collect();
            repump.push(RepumpOp { entries });
        }

        let s = &sc.initial;
        let ia = active_index(s.level_a().index())
            .ok_or_else(|| Error::config("initial superposition must live in D5/2".to_string()))?;
        let ib = active_index(s.level_b().index())
            .ok_or_else(|| Error::config("initial superposition must live in D5/2".to_string()))?;
        let init = InitialDraw {
            ia,
            ib,
            amp_a: s.rho1().sqrt(),
            amp_b: s.rho2().sqrt(),
            phase: C64::new(0.0, s.phi_d0()).exp(),
            coherent: sc.initial_coherent,
            fidelity: sc.imperfections.preparation_fidelity,
            rho1: s.rho1(),
        };

        let envelope = gen.envelope().clone();
        let t_max_ns = sc.grid.t_max_ns;
        let mut sampler = TrajectorySampler {
            g0,
            gd,
            envelope,
            cells: Vec::new(),
            det_m,
            eta: sc.collection.efficiency,
            beta_s: sc.decay.branch_s12,
            beta_d3: sc.decay.branch_d32,
            repump,
            background_per_ns: sc.imperfections.background_rate_per_ns,
            t_max_ns,
            support_end_ns: gen.envelope().support_end(),
            init,
        };
        sampler.cells = sampler.build_cells(gen.segment_bounds(0.0, t_max_ns));
        Ok(sampler)
    }

    fn generator_at(&self, t: f64) -> M10 {
        let env = self.envelope.value(t);
        if env == 0.0 { self.g0 } else { self.g0 + self.gd.map(|z| z * env) }
    }

    /// Propagators over a grid aligned with the envelope breakpoints, so each
    /// cell sees a smooth drive amplitude.
    fn build_cells(&self, bounds: Vec<f64>) -> Vec<Cell> {
        let mut cells = Vec::new();
        for w in bounds.windows(2) {
            let (a, b) = (w[0], w[1]);
            let n = ((b - a) / CELL_NS).ceil().max(1.0) as usize;
            let dt = (b - a) / n as f64;
            for j in 0..n {
                let t0 = a + j as f64 * dt;
                cells.push(Cell { t0, dt, u: self.propagator(t0, dt) });
            }
        }
        cells
    }

    fn propagator(&self, t0: f64, dt: f64) -> M10 {
        let n = (dt / SUB_NS).ceil().max(1.0) as usize;
        let h = dt / n as f64;
        let mut u = M10::identity();
        for k in 0..n {
            let t = t0 + k as f64 * h;
            let a1 = self.generator_at(t);
            let a2 = self.generator_at(t + 0.5 * h);
            let a4 = self.generator_at(t + h);
            let k1 = a1 * u;
            let k2 = a2 * (u + k1 * C64::new(0.5 * h, 0.0));
            let k3 = a2 * (u + k2 * C64::new(0.5 * h, 0.0));
            let k4 = a4 * (u + k3 * C64::new(h, 0.0));
            u += (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * C64::new(h / 6.0, 0.0);
        }
        u
    }

    /// RK4 for the wave function itself, used off the precomputed grid
    /// (partial cells around jumps).
    fn advance(&self, t0: f64, psi: &V10, dt: f64) -> V10 {
        if dt <= 0.0 {
            return *psi;
        }
        let n = (dt / SUB_NS).ceil().max(1.0) as usize;
        let h = dt / n as f64;
        let mut y = *psi;
        for k in 0..n {
            let t = t0 + k as f64 * h;
            let a1 = self.generator_at(t);
            let a2 = self.generator_at(t + 0.5 * h);
            let a4 = self.generator_at(t + h);
            let k1 = a1 * y;
            let k2 = a2 * (y + k1 * C64::new(0.5 * h, 0.0));
            let k3 = a2 * (y + k2 * C64::new(0.5 * h, 0.0));
            let k4 = a4 * (y + k3 * C64::new(h, 0.0));
            y += (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * C64::new(h / 6.0, 0.0);
        }
        y
    }

    /// Find where ‖ψ‖² crosses `target` inside [t0, t0+dt], by bisection;
    /// the norm is monotone along a trajectory. Returns (offset, state).
    fn locate_jump(&self, t0: f64, psi: &V10, dt: f64, target: f64) -> (f64, V10) {
        let (mut lo, mut hi) = (0.0f64, dt);
        for _ in 0..60 {
            if hi - lo < 1e-4 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let trial = self.advance(t0, psi, mid);
            if trial.norm_squared() <= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let state = self.advance(t0, psi, hi);
        (hi, state)
    }

    fn p_norm2(psi: &V10) -> f64 {
        (P_START..DIM).map(|i| psi[i].norm_sqr()).sum()
    }

    fn detection_expectation(&self, psi: &V10) -> f64 {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..4 {
            for j in 0..4 {
                acc += psi[P_START + i].conj() * self.det_m[(i, j)] * psi[P_START + j];
            }
        }
        acc.re
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> V10 {
        let mut psi = V10::zeros();
        let init = &self.init;
        if !init.coherent {
            let idx = if rng.gen::<f64>() < init.rho1 { init.ia } else { init.ib };
            psi[idx] = C64::new(1.0, 0.0);
            return psi;
        }
        let ideal = init.fidelity >= 1.0 || rng.gen::<f64>() < init.fidelity;
        if ideal {
            psi[init.ia] = C64::new(init.amp_a, 0.0);
            psi[init.ib] = init.phase * init.amp_b;
        } else {
            psi[init.ia] = C64::new(init.amp_b, 0.0);
            psi[init.ib] = -init.phase * init.amp_a;
        }
        psi
    }

    /// Simulate one trigger. The RNG stream is fully determined by
    /// (seed, trigger), and every random decision for the trigger happens on
    /// that stream in a fixed order.
    fn run_trigger(&self, trigger: u64, seed: u64, opts: &SamplerOptions) -> Vec<ClickRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trigger);

        let click_ns = self.evolve_trigger(&mut rng);

        let mut times_ps: Vec<u64> = Vec::new();
        if let Some(t) = click_ns {
            // drawn unconditionally on a click so the jitter width never
            // changes which random numbers later decisions see
            let z: f64 = StandardNormal.sample(&mut rng);
            let t_ps = (t * 1e3 + z * opts.pmt_sigma_ps).round().max(0.0);
            times_ps.push(t_ps as u64);
        }
        if self.background_per_ns > 0.0 {
            let lambda = self.background_per_ns * self.t_max_ns;
            let n: f64 = Poisson::new(lambda).expect("positive rate").sample(&mut rng);
            let span_ps = (self.t_max_ns * 1e3) as u64;
            for _ in 0..n as u64 {
                times_ps.push(rng.gen_range(0..span_ps.max(1)));
            }
        }
        times_ps.sort_unstable();
        times_ps
            .into_iter()
            .map(|timestamp_ps| ClickRecord {
                trigger_index: trigger,
                channel: Channel::Detector393,
                timestamp_ps,
            })
            .collect()
    }

    /// Returns the emission time of a detected 393-nm photon, if any.
    fn evolve_trigger(&self, rng: &mut ChaCha8Rng) -> Option<f64> {
        let mut psi = self.initial_state(rng);
        let mut survival: f64 = 1.0 - rng.gen::<f64>();
        let mut cell_idx = 0usize;
        // Position within the current cell; nonzero right after a repump.
        let mut offset = 0.0f64;

        while cell_idx < self.cells.len() {
            let cell = &self.cells[cell_idx];
            let t_here = cell.t0 + offset;
            if t_here >= self.support_end_ns && Self::p_norm2(&psi) < QUIET_P_NORM2 {
                return None;
            }
            let next = if offset == 0.0 {
                cell.u * psi
            } else {
                self.advance(t_here, &psi, cell.dt - offset)
            };
            if next.norm_squared() <= survival {
                let (dt_jump, at_jump) =
                    self.locate_jump(t_here, &psi, cell.dt - offset, survival);
                let t_jump = t_here + dt_jump;
                let branch: f64 = rng.gen();
                if branch < self.beta_s {
                    let p_p = Self::p_norm2(&at_jump);
                    let p_click = if p_p > 0.0 {
                        (self.eta * self.detection_expectation(&at_jump) / p_p).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    if rng.gen::<f64>() < p_click {
                        return Some(t_jump);
                    }
                    return None; // shelved in S1/2, photon missed
                } else if branch < self.beta_s + self.beta_d3 {
                    return None; // shelved in D3/2
                }
                // 854-nm decay back to D5/2: project, renormalize, continue.
                let mut candidates: Vec<V10> = Vec::with_capacity(self.repump.len());
                let mut weights = Vec::with_capacity(self.repump.len());
                for op in &self.repump {
                    let mut v = V10::zeros();
                    for &(lo, up, c) in &op.entries {
                        v[lo] += at_jump[up] * c;
                    }
                    weights.push(v.norm_squared());
                    candidates.push(v);
                }
                let total: f64 = weights.iter().sum();
                if total <= 0.0 {
                    return None;
                }
                let mut pick = rng.gen::<f64>() * total;
                let mut chosen = candidates.len() - 1;
                for (k, w) in weights.iter().enumerate() {
                    if pick < *w {
                        chosen = k;
                        break;
                    }
                    pick -= w;
                }
                psi = candidates[chosen] / C64::new(weights[chosen].sqrt(), 0.0);
                survival = 1.0 - rng.gen::<f64>();
                offset = t_jump - cell.t0;
                if offset >= cell.dt - 1e-12 {
                    cell_idx += 1;
                    offset = 0.0;
                }
                continue;
            }
            psi = next;
            cell_idx += 1;
            offset = 0.0;
        }
        None
    }
}
