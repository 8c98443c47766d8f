//! Closed-form scattering amplitudes for the quantum-beat schemes.
//!
//! The chain is: prepared D₅/₂ superposition → 854-nm absorption into P₃/₂
//! (complex Lorentzian response per channel) → 393-nm emission into S₁/₂ →
//! polarization analyzer at the cone center. Interference of the two
//! scattering paths produces the beat:
//!
//! - Λ scheme, H analyzer: I ∝ ⅓c²·(1 + cos(Φ_D(t) + Φ₈₅₄ + δφ)),
//! - V scheme, V analyzer: I ∝ ⅛c²·(1 − cos(Φ_D(t) + Φ₈₅₄ + δφ)),
//!
//! where δφ is the relative phase of the two Lorentzian channel responses
//! (zero when both channels sit symmetrically around the laser).
//!
//! The model is quasi-static: time enters only through the precession phase
//! Φ_D(t) = Φ_D(0) + 2π ν t with the *signed* beat frequency
//! ν = (μ_B/h)·g_D·(m_a − m_b)·B, which is what the Schrödinger phases
//! e^{−iE t/ħ} of the two sublevels produce. Wave-packet envelopes are the
//! master-equation module's job.

use crate::atomic::{
    cgc, larmor_frequency, zeeman_shift, Manifold, Sublevel, TransitionChannel, ZeemanConfig,
};
use crate::geometry::{detection_amplitude, q_index, Analyzer};
use crate::{C64, Error, Result};

/// Excitation-path topology of the beat experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Two D₅/₂ sublevels share one P₃/₂ sublevel; interference in absorption.
    Lambda,
    /// Two P₃/₂ sublevels feed one S₁/₂ sublevel; interference in emission.
    V,
}

impl Scheme {
    /// The canonical prepared superposition: Λ uses (−3/2, +1/2) with equal
    /// populations; V uses (−5/2, +3/2) with populations (1/4, 3/4).
    pub fn canonical_superposition(self, phi_d0: f64) -> AtomicSuperposition {
        match self {
            Scheme::Lambda => AtomicSuperposition::in_d52(-3, 1, 0.5, 0.5, phi_d0).unwrap(),
            Scheme::V => AtomicSuperposition::in_d52(-5, 3, 0.25, 0.75, phi_d0).unwrap(),
        }
    }

    /// Analyzer output that carries this scheme's beat.
    pub fn analyzer(self) -> Analyzer {
        match self {
            Scheme::Lambda => Analyzer::H,
            Scheme::V => Analyzer::V,
        }
    }

    /// The two interfering 854-nm absorption channels (σ⁺ out of level a,
    /// σ⁻ out of level b).
    pub fn channels(self) -> (TransitionChannel, TransitionChannel) {
        let s = self.canonical_superposition(0.0);
        let find = |lower: Sublevel, q: i8| {
            let upper = Sublevel::new(Manifold::P32, lower.m2() + 2 * q).unwrap();
            TransitionChannel {
                lower,
                upper,
                q,
                cgc: cgc(lower.manifold().j(), lower.m(), q, upper.manifold().j(), upper.m())
                    .unwrap(),
            }
        };
        (find(s.level_a(), 1), find(s.level_b(), -1))
    }

    pub fn label(self) -> &'static str {
        match self {
            Scheme::Lambda => "lambda",
            Scheme::V => "v",
        }
    }
}

/// Prepared two-level superposition √ρ₁|a⟩ + e^{iΦ_D}√ρ₂|b⟩ in D₅/₂.
#[derive(Debug, Clone, Copy)]
pub struct AtomicSuperposition {
    level_a: Sublevel,
    level_b: Sublevel,
    rho1: f64,
    rho2: f64,
    phi_d0: f64,
}

impl AtomicSuperposition {
    pub fn new(
        level_a: Sublevel,
        level_b: Sublevel,
        rho1: f64,
        rho2: f64,
        phi_d0: f64,
    ) -> Result<Self> {
        if level_a.manifold() != Manifold::D52 || level_b.manifold() != Manifold::D52 {
            return Err(Error::domain("superposition levels must lie in D5/2"));
        }
        if level_a == level_b {
            return Err(Error::domain("superposition needs two distinct sublevels"));
        }
        if !(0.0..=1.0).contains(&rho1) || !(0.0..=1.0).contains(&rho2) {
            return Err(Error::domain("populations must lie in [0, 1]"));
        }
        if (rho1 + rho2 - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!(
                "populations must sum to 1, got {rho1} + {rho2}"
            )));
        }
        Ok(AtomicSuperposition { level_a, level_b, rho1, rho2, phi_d0 })
    }

    /// Convenience constructor from doubled m quantum numbers in D₅/₂.
    pub fn in_d52(m2_a: i8, m2_b: i8, rho1: f64, rho2: f64, phi_d0: f64) -> Result<Self> {
        Self::new(
            Sublevel::new(Manifold::D52, m2_a)?,
            Sublevel::new(Manifold::D52, m2_b)?,
            rho1,
            rho2,
            phi_d0,
        )
    }

    pub fn level_a(&self) -> Sublevel {
        self.level_a
    }

    pub fn level_b(&self) -> Sublevel {
        self.level_b
    }

    pub fn rho1(&self) -> f64 {
        self.rho1
    }

    pub fn rho2(&self) -> f64 {
        self.rho2
    }

    pub fn phi_d0(&self) -> f64 {
        self.phi_d0
    }

    pub fn with_phi_d0(mut self, phi_d0: f64) -> Self {
        self.phi_d0 = phi_d0;
        self
    }

    pub fn with_populations(mut self, rho1: f64, rho2: f64) -> Result<Self> {
        if (rho1 + rho2 - 1.0).abs() > 1e-12 || !(0.0..=1.0).contains(&rho1) {
            return Err(Error::domain("populations must be in [0,1] and sum to 1"));
        }
        self.rho1 = rho1;
        self.rho2 = rho2;
        Ok(self)
    }

    /// Signed precession frequency of the relative phase, in MHz:
    /// (μ_B/h)·g_D·(m_a − m_b)·B. Its magnitude is the observed beat
    /// frequency.
    pub fn beat_frequency_mhz(&self, cfg: &ZeemanConfig) -> f64 {
        let dm = ((self.level_a.m2() - self.level_b.m2()) / 2) as i32;
        larmor_frequency(cfg, Manifold::D52, dm)
    }

    /// Φ_D(t) = Φ_D(0) + 2π ν t with t in ns.
    pub fn phi_d(&self, cfg: &ZeemanConfig, t_ns: f64) -> f64 {
        self.phi_d0 + 2.0 * std::f64::consts::PI * self.beat_frequency_mhz(cfg) * 1e-3 * t_ns
    }
}

/// 854-nm photon polarization on the (σ⁺, σ⁻) Bloch sphere:
/// cos(ϑ/2)|σ⁺⟩ + sin(ϑ/2)e^{iΦ₈₅₄}|σ⁻⟩ for propagation along B.
#[derive(Debug, Clone, Copy)]
pub struct PhotonPolarization {
    pub theta: f64,
    pub phi854: f64,
}

impl PhotonPolarization {
    pub const H: PhotonPolarization =
        PhotonPolarization { theta: std::f64::consts::FRAC_PI_2, phi854: 0.0 };
    pub const V: PhotonPolarization =
        PhotonPolarization { theta: std::f64::consts::FRAC_PI_2, phi854: std::f64::consts::PI };
    pub const D: PhotonPolarization =
        PhotonPolarization { theta: std::f64::consts::FRAC_PI_2, phi854: std::f64::consts::FRAC_PI_2 };
    pub const A: PhotonPolarization = PhotonPolarization {
        theta: std::f64::consts::FRAC_PI_2,
        phi854: 3.0 * std::f64::consts::FRAC_PI_2,
    };

    pub fn new(theta: f64, phi854: f64) -> Result<Self> {
        if !(0.0..=std::f64::consts::PI).contains(&theta) {
            return Err(Error::domain(format!("polar angle {theta} must lie in [0, π]")));
        }
        Ok(PhotonPolarization { theta, phi854 })
    }

    pub fn from_label(label: &str) -> Result<Self> {
        match label {
            "H" | "h" => Ok(Self::H),
            "V" | "v" => Ok(Self::V),
            "D" | "d" => Ok(Self::D),
            "A" | "a" => Ok(Self::A),
            other => Err(Error::config(format!(
                "unknown polarization label {other:?} (expected H, V, D or A)"
            ))),
        }
    }
}

/// Circular amplitudes (a₊₁, a₋₁) of the 854-nm photon in the atomic frame.
pub fn atomic_frame_polarization(p: PhotonPolarization) -> (C64, C64) {
    let a_plus = C64::new((p.theta / 2.0).cos(), 0.0);
    let a_minus = C64::new((p.theta / 2.0).sin(), 0.0) * (C64::i() * p.phi854).exp();
    (a_plus, a_minus)
}

/// Combined channel response c = CGC · c̃(Δ) with the complex Lorentzian
/// c̃ = 1/(1 − 2i·Δ_ch/Γ_P), where Δ_ch = Δ − [z(upper) − z(lower)] is the
/// detuning from this channel's Zeeman-shifted resonance. |c̃| = 1 on
/// resonance; the phase is +atan(2Δ_ch/Γ_P), matching the adiabatic
/// steady-state amplitude of the driven master equation.
pub fn lorentzian_response(
    ch: &TransitionChannel,
    delta_mhz: f64,
    gamma_p_mhz: f64,
    cfg: &ZeemanConfig,
) -> Result<C64> {
    if gamma_p_mhz <= 0.0 || !gamma_p_mhz.is_finite() {
        return Err(Error::config(format!("linewidth {gamma_p_mhz} MHz must be positive")));
    }
    let delta_ch = delta_mhz - (zeeman_shift(cfg, ch.upper) - zeeman_shift(cfg, ch.lower));
    let c_tilde = C64::new(1.0, 0.0) / C64::new(1.0, -2.0 * delta_ch / gamma_p_mhz);
    Ok(c_tilde * ch.cgc)
}

/// Detuning Δ* at which the two interfering absorption channels of the
/// scheme respond with equal magnitude |c₁| = |c₂|.
pub fn balance_detuning(scheme: Scheme, cfg: &ZeemanConfig, gamma_p_mhz: f64) -> Result<f64> {
    let (ch1, ch2) = scheme.channels();
    balance_detuning_channels(&ch1, &ch2, cfg, gamma_p_mhz)
}

/// General form of [`balance_detuning`] for an arbitrary channel pair.
/// When several balanced detunings exist (the balance condition is quadratic)
/// the one with the larger common response magnitude is returned.
pub fn balance_detuning_channels(
    ch1: &TransitionChannel,
    ch2: &TransitionChannel,
    cfg: &ZeemanConfig,
    gamma_p_mhz: f64,
) -> Result<f64> {
    let magnitude = |ch: &TransitionChannel, delta: f64| -> Result<f64> {
        Ok(lorentzian_response(ch, delta, gamma_p_mhz, cfg)?.norm())
    };
    let diff = |delta: f64| -> Result<f64> {
        Ok(magnitude(ch1, delta)? - magnitude(ch2, delta)?)
    };
    let res1 = zeeman_shift(cfg, ch1.upper) - zeeman_shift(cfg, ch1.lower);
    let res2 = zeeman_shift(cfg, ch2.upper) - zeeman_shift(cfg, ch2.lower);
    let lo = res1.min(res2) - 3.0 * gamma_p_mhz;
    let hi = res1.max(res2) + 3.0 * gamma_p_mhz;
    let n = 800;
    let mut roots: Vec<f64> = Vec::new();
    let mut prev_x = lo;
    let mut prev_f = diff(lo)?;
    for k in 1..=n {
        let x = lo + (hi - lo) * k as f64 / n as f64;
        let f = diff(x)?;
        if prev_f == 0.0 {
            roots.push(prev_x);
        } else if prev_f * f < 0.0 {
            // bisect to machine precision
            let (mut a, mut b, mut fa) = (prev_x, x, prev_f);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                let fm = diff(m)?;
                if fm == 0.0 || (b - a) < 1e-13 {
                    a = m;
                    break;
                }
                if fa * fm < 0.0 {
                    b = m;
                } else {
                    a = m;
                    fa = fm;
                }
            }
            roots.push(0.5 * (a + b));
        }
        prev_x = x;
        prev_f = f;
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let best = roots
        .into_iter()
        .map(|delta| (delta, magnitude(ch1, delta).unwrap_or(0.0)))
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    match best {
        Some((delta, _)) => Ok(delta),
        None => Err(Error::numeric(format!(
            "no balanced detuning for channels {} -> {} and {} -> {} in [{lo:.2}, {hi:.2}] MHz",
            ch1.lower.label(),
            ch1.upper.label(),
            ch2.lower.label(),
            ch2.upper.label()
        ))),
    }
}

/// Complex excitation amplitudes of the four P₃/₂ sublevels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct P32Amplitudes {
    amps: [C64; 4],
}

impl P32Amplitudes {
    pub fn amplitude(&self, m2: i8) -> C64 {
        assert!(m2.abs() <= 3 && m2.rem_euclid(2) == 1, "no P3/2 sublevel with 2m = {m2}");
        self.amps[((m2 + 3) / 2) as usize]
    }

    fn add(&mut self, m2: i8, value: C64) {
        self.amps[((m2 + 3) / 2) as usize] += value;
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }
}

/// Drive the prepared superposition with the 854-nm photon: every σ±
/// absorption channel out of the two populated sublevels contributes
/// (weight)·(a_q)·(CGC·c̃) to its target P₃/₂ sublevel. At time t the
/// phase-carrying sublevel has precessed by Φ_D(t) − Φ_D(0).
pub fn apply_absorption(
    s: &AtomicSuperposition,
    p: PhotonPolarization,
    delta_mhz: f64,
    gamma_p_mhz: f64,
    cfg: &ZeemanConfig,
    t_ns: f64,
) -> Result<P32Amplitudes> {
    let (a_plus, a_minus) = atomic_frame_polarization(p);
    let weight_a = C64::new(s.rho1().sqrt(), 0.0);
    let weight_b =
        C64::new(s.rho2().sqrt(), 0.0) * (C64::i() * s.phi_d(cfg, t_ns)).exp();
    let mut out = P32Amplitudes::default();
    for (level, weight) in [(s.level_a(), weight_a), (s.level_b(), weight_b)] {
        for (q, a_q) in [(1i8, a_plus), (-1i8, a_minus)] {
            let m2_upper = level.m2() + 2 * q;
            let Ok(upper) = Sublevel::new(Manifold::P32, m2_upper) else { continue };
            let ch = TransitionChannel {
                lower: level,
                upper,
                q,
                cgc: cgc(level.manifold().j(), level.m(), q, upper.manifold().j(), upper.m())?,
            };
            let c = lorentzian_response(&ch, delta_mhz, gamma_p_mhz, cfg)?;
            out.add(m2_upper, weight * a_q * c);
        }
    }
    Ok(out)
}

/// Joint photon ⊗ S₁/₂ amplitudes after spontaneous 393-nm emission,
/// indexed by emitted polarization q and final sublevel m_S.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScatteringAmplitudes {
    // [q+1][(m_S2+1)/2]
    amps: [[C64; 2]; 3],
}

impl ScatteringAmplitudes {
    pub fn amplitude(&self, q: i8, m_s2: i8) -> C64 {
        assert!(q.abs() <= 1, "polarization index {q} out of range");
        assert!(m_s2 == -1 || m_s2 == 1, "no S1/2 sublevel with 2m = {m_s2}");
        self.amps[q_index(q)][((m_s2 + 1) / 2) as usize]
    }

    /// Σ|amplitude|² over all channels; bounded by 1.
    pub fn total_probability(&self) -> f64 {
        self.amps.iter().flatten().map(|a| a.norm_sqr()).sum()
    }

    /// Intensity through the analyzer at the center of the collection cone:
    /// coherent sum over q within each final sublevel, incoherent over m_S.
    pub fn analyzed_intensity(&self, analyzer: Analyzer) -> f64 {
        let center = (std::f64::consts::FRAC_PI_2, 0.0);
        [-1i8, 1]
            .iter()
            .map(|&m_s2| {
                let field: C64 = [-1i8, 0, 1]
                    .iter()
                    .map(|&q| {
                        detection_amplitude(analyzer, q, center.0, center.1)
                            * self.amplitude(q, m_s2)
                    })
                    .sum();
                field.norm_sqr()
            })
            .sum()
    }
}

/// Spontaneous-emission step: each excited P₃/₂ amplitude branches into its
/// 393-nm channels with Clebsch–Gordan weights.
pub fn apply_emission(p32: &P32Amplitudes) -> ScatteringAmplitudes {
    let mut out = ScatteringAmplitudes::default();
    for upper in Manifold::P32.sublevels() {
        let amp = p32.amplitude(upper.m2());
        if amp == C64::new(0.0, 0.0) {
            continue;
        }
        for q in [-1i8, 0, 1] {
            let m_s2 = upper.m2() - 2 * q;
            let Ok(lower) = Sublevel::new(Manifold::S12, m_s2) else { continue };
            let weight =
                cgc(lower.manifold().j(), lower.m(), q, upper.manifold().j(), upper.m()).unwrap();
            out.amps[q_index(q)][((m_s2 + 1) / 2) as usize] += amp * weight;
        }
    }
    out
}

/// Central-ray detected intensity of the full scattering chain at time t.
/// Any scheme/analyzer combination is computed faithfully; the beat appears
/// in the combination returned by [`Scheme::analyzer`].
#[allow(clippy::too_many_arguments)]
pub fn detected_intensity(
    analyzer: Analyzer,
    s: &AtomicSuperposition,
    p: PhotonPolarization,
    delta_mhz: f64,
    gamma_p_mhz: f64,
    cfg: &ZeemanConfig,
    t_ns: f64,
) -> Result<f64> {
    let p32 = apply_absorption(s, p, delta_mhz, gamma_p_mhz, cfg, t_ns)?;
    Ok(apply_emission(&p32).analyzed_intensity(analyzer))
}

/// Beat parameters of the closed-form intensity, for comparison against
/// numerical flux curves: I(t) = offset·(1 + contrast·cos(2π ν t + phase)).
#[derive(Debug, Clone, Copy)]
pub struct ClosedFormBeat {
    /// Signed precession frequency in MHz; |value| is the beat frequency.
    pub nu_mhz: f64,
    /// Modulation contrast (visibility) in [0, 1].
    pub contrast: f64,
    /// Phase of the cosine at t = 0, radians.
    pub phase: f64,
    /// Mean intensity (arbitrary units).
    pub offset: f64,
}

/// Closed-form beat parameters of the scheme's own analyzer output.
///
/// Λ/H: offset·(1 + V cos(Φ_D(t) + Φ₈₅₄ + δφ)) with V = 2|c₁c₂|/(|c₁|²+|c₂|²);
/// V/V: the same with cos(… + π), i.e. the antiphased modulation of Eq.-(17)
/// form. δφ = arg c₂ − arg c₁ is the Lorentzian phase offset.
pub fn closed_form_beat(
    scheme: Scheme,
    s: &AtomicSuperposition,
    p: PhotonPolarization,
    delta_mhz: f64,
    gamma_p_mhz: f64,
    cfg: &ZeemanConfig,
) -> Result<ClosedFormBeat> {
    let (ch1, ch2) = scheme.channels();
    let c1 = lorentzian_response(&ch1, delta_mhz, gamma_p_mhz, cfg)?;
    let c2 = lorentzian_response(&ch2, delta_mhz, gamma_p_mhz, cfg)?;
    let (a_plus, a_minus) = atomic_frame_polarization(p);
    // Path weights as they appear in the detected final state. For Λ both
    // paths share the π-emission factor; for V the emission CGCs (1 and
    // √(1/3)) multiply the two paths.
    let (em1, em2, extra_phase) = match scheme {
        Scheme::Lambda => {
            let em = cgc(0.5, -0.5, 0, 1.5, -0.5)?;
            (em, em, 0.0)
        }
        Scheme::V => {
            (cgc(0.5, -0.5, -1, 1.5, -1.5)?, cgc(0.5, -0.5, 1, 1.5, 0.5)?, std::f64::consts::PI)
        }
    };
    let path1 = C64::new(s.rho1().sqrt(), 0.0) * a_plus * c1 * em1;
    let path2 = C64::new(s.rho2().sqrt(), 0.0) * a_minus * c2 * em2;
    let m1 = path1.norm_sqr();
    let m2 = path2.norm_sqr();
    if m1 + m2 == 0.0 {
        return Err(Error::domain("both scattering paths vanish; no beat defined"));
    }
    let contrast = 2.0 * (m1 * m2).sqrt() / (m1 + m2);
    let phase = s.phi_d0() + (path2 * path1.conj()).arg() + extra_phase;
    // the V analyzer projects each σ component with weight 1/2; the Λ beat
    // rides the full π amplitude
    let offset = match scheme {
        Scheme::Lambda => m1 + m2,
        Scheme::V => 0.5 * (m1 + m2),
    };
    Ok(ClosedFormBeat {
        nu_mhz: s.beat_frequency_mhz(cfg),
        contrast,
        phase: wrap_angle(phase),
        offset,
    })
}

/// Wrap an angle to (−π, π].
pub fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut y = x.rem_euclid(two_pi);
    if y > std::f64::consts::PI {
        y -= two_pi;
    }
    y
}
