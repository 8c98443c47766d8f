//! Level structure of ⁴⁰Ca⁺: the five fine-structure manifolds relevant to
//! 393/397/850/854-nm light, their Zeeman sublevels, Landé factors, and the
//! Clebsch–Gordan coefficients that weight every dipole transition channel.
//!
//! Sublevels carry a global index 0..18 in the order S₁/₂, D₃/₂, D₅/₂, P₁/₂,
//! P₃/₂ (each manifold sorted by increasing m). That ordering is what the
//! density-matrix and trajectory codes use for their state vectors.
//!
//! Angular-momentum conventions are Condon–Shortley throughout:
//! [`cgc`]`(l, q, u)` = ⟨J_u m_u | J_l m_l; 1 q⟩, so for every upper sublevel
//! the squared coefficients over one lower manifold sum to exactly 1.

use crate::{Error, Result};

/// Bohr magneton over Planck constant, in MHz per gauss.
pub const MU_B_OVER_H_MHZ_PER_G: f64 = 1.3996245;

/// Total number of Zeeman sublevels across the five manifolds.
pub const NUM_LEVELS: usize = 18;

/// Fine-structure manifolds of the Ca⁺ valence electron, in global index
/// order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Manifold {
    S12,
    D32,
    D52,
    P12,
    P32,
}

impl Manifold {
    pub const ALL: [Manifold; 5] = [
        Manifold::S12,
        Manifold::D32,
        Manifold::D52,
        Manifold::P12,
        Manifold::P32,
    ];

    /// Twice the total angular momentum J.
    pub const fn j2(self) -> i8 {
        match self {
            Manifold::S12 | Manifold::P12 => 1,
            Manifold::D32 | Manifold::P32 => 3,
            Manifold::D52 => 5,
        }
    }

    pub fn j(self) -> f64 {
        self.j2() as f64 / 2.0
    }

    /// Orbital angular momentum L.
    pub const fn l(self) -> u8 {
        match self {
            Manifold::S12 => 0,
            Manifold::P12 | Manifold::P32 => 1,
            Manifold::D32 | Manifold::D52 => 2,
        }
    }

    /// Landé g-factor in the pure-LS limit, exact rationals.
    pub fn lande_g(self) -> f64 {
        match self {
            Manifold::S12 => 2.0,
            Manifold::D32 => 4.0 / 5.0,
            Manifold::D52 => 6.0 / 5.0,
            Manifold::P12 => 2.0 / 3.0,
            Manifold::P32 => 4.0 / 3.0,
        }
    }

    /// Number of Zeeman sublevels, 2J+1.
    pub const fn multiplicity(self) -> usize {
        (self.j2() as usize) + 1
    }

    /// Global index of the m = −J sublevel.
    pub const fn base_index(self) -> usize {
        match self {
            Manifold::S12 => 0,
            Manifold::D32 => 2,
            Manifold::D52 => 6,
            Manifold::P12 => 12,
            Manifold::P32 => 14,
        }
    }

    /// Sublevels in increasing m.
    pub fn sublevels(self) -> impl Iterator<Item = Sublevel> {
        let j2 = self.j2();
        (-j2..=j2).step_by(2).map(move |m2| Sublevel { manifold: self, m2 })
    }

    pub fn label(self) -> &'static str {
        match self {
            Manifold::S12 => "S1/2",
            Manifold::D32 => "D3/2",
            Manifold::D52 => "D5/2",
            Manifold::P12 => "P1/2",
            Manifold::P32 => "P3/2",
        }
    }
}

/// One Zeeman sublevel |manifold, m⟩. `m2` stores 2m so half-integers stay
/// exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Sublevel {
    manifold: Manifold,
    m2: i8,
}

impl Sublevel {
    /// Build from a manifold and twice the magnetic quantum number.
    pub fn new(manifold: Manifold, m2: i8) -> Result<Self> {
        let j2 = manifold.j2();
        if m2.abs() > j2 || (m2 - j2) % 2 != 0 {
            return Err(Error::domain(format!(
                "no sublevel m = {}/2 in {} (J = {}/2)",
                m2,
                manifold.label(),
                j2
            )));
        }
        Ok(Sublevel { manifold, m2 })
    }

    pub fn manifold(self) -> Manifold {
        self.manifold
    }

    /// Twice the magnetic quantum number.
    pub fn m2(self) -> i8 {
        self.m2
    }

    pub fn m(self) -> f64 {
        self.m2 as f64 / 2.0
    }

    /// Global index in the 18-level ordering.
    pub fn index(self) -> usize {
        self.manifold.base_index() + ((self.m2 + self.manifold.j2()) / 2) as usize
    }

    /// Inverse of [`Sublevel::index`].
    pub fn from_index(index: usize) -> Result<Self> {
        for manifold in Manifold::ALL {
            let base = manifold.base_index();
            if index < base + manifold.multiplicity() {
                let m2 = 2 * (index - base) as i8 - manifold.j2();
                return Ok(Sublevel { manifold, m2 });
            }
        }
        Err(Error::domain(format!("sublevel index {index} out of range 0..{NUM_LEVELS}")))
    }

    pub fn label(self) -> String {
        format!("{}[m={:+}/2]", self.manifold.label(), self.m2)
    }
}

/// Static magnetic field plus the per-manifold g-factors that turn it into
/// Zeeman splittings. Overriding an entry of `g` is meant for tests; the
/// defaults are the exact LS-coupling values.
#[derive(Debug, Clone)]
pub struct ZeemanConfig {
    b_gauss: f64,
    /// μ_B/h in MHz/G; default [`MU_B_OVER_H_MHZ_PER_G`].
    pub mu_b_over_h: f64,
    /// g-factors indexed by [`Manifold::ALL`] position.
    pub g: [f64; 5],
}

impl ZeemanConfig {
    /// Field strength must be finite and non-negative.
    pub fn new(b_gauss: f64) -> Result<Self> {
        if !b_gauss.is_finite() || b_gauss < 0.0 {
            return Err(Error::domain(format!("magnetic field {b_gauss} G must be finite and >= 0")));
        }
        Ok(ZeemanConfig {
            b_gauss,
            mu_b_over_h: MU_B_OVER_H_MHZ_PER_G,
            g: [
                Manifold::S12.lande_g(),
                Manifold::D32.lande_g(),
                Manifold::D52.lande_g(),
                Manifold::P12.lande_g(),
                Manifold::P32.lande_g(),
            ],
        })
    }

    pub fn b_gauss(&self) -> f64 {
        self.b_gauss
    }

    pub fn g_factor(&self, manifold: Manifold) -> f64 {
        let slot = Manifold::ALL.iter().position(|&x| x == manifold).unwrap();
        self.g[slot]
    }
}

/// Zeeman shift of one sublevel in MHz: (μ_B/h) · g · m · B.
pub fn zeeman_shift(cfg: &ZeemanConfig, level: Sublevel) -> f64 {
    cfg.mu_b_over_h * cfg.g_factor(level.manifold) * level.m() * cfg.b_gauss
}

/// Larmor beat frequency in MHz between two sublevels of one manifold
/// separated by `delta_m`: (μ_B/h) · g · Δm · B. Signed with `delta_m`.
pub fn larmor_frequency(cfg: &ZeemanConfig, manifold: Manifold, delta_m: i32) -> f64 {
    cfg.mu_b_over_h * cfg.g_factor(manifold) * delta_m as f64 * cfg.b_gauss
}

/// Clebsch–Gordan coefficient ⟨J_u m_u | J_l m_l; 1 q⟩ coupling a lower level
/// to an upper level through one unit of photon angular momentum, in
/// Condon–Shortley phase convention.
///
/// Angular momenta are passed as physical (possibly half-integer) values.
/// Selection-rule violations (m_u ≠ m_l + q, |ΔJ| > 1, J_l = J_u = 0, |m| > J)
/// return 0.0; non-physical arguments (negative or non-half-integer J, m not
/// matching J's integer/half-integer character, |q| > 1) are domain errors.
pub fn cgc(lower_j: f64, m_lower: f64, q: i8, upper_j: f64, m_upper: f64) -> Result<f64> {
    let j1 = to_doubled(lower_j, "lower J")?;
    let m1 = to_doubled(m_lower, "lower m")?;
    let ju = to_doubled(upper_j, "upper J")?;
    let mu = to_doubled(m_upper, "upper m")?;
    if j1 < 0 || ju < 0 {
        return Err(Error::domain("angular momentum J must be non-negative"));
    }
    if (j1 - m1) % 2 != 0 || (ju - mu) % 2 != 0 {
        return Err(Error::domain(
            "m must have the same integer/half-integer character as J",
        ));
    }
    if q.abs() > 1 {
        return Err(Error::domain(format!("photon polarization index q = {q} not in -1..=1")));
    }
    if m1.abs() > j1 || mu.abs() > ju {
        return Ok(0.0);
    }
    if mu != m1 + 2 * q as i8 || (ju - j1).abs() > 2 || (j1 == 0 && ju == 0) {
        return Ok(0.0);
    }
    Ok(cgc_doubled(j1, m1, q, ju))
}

/// Closed-form j₁ ⊗ 1 coupling table; arguments are doubled quantum numbers,
/// selection rules already checked. Rows are J = j₁+1, j₁, j₁−1; the signs
/// follow Condon–Shortley.
fn cgc_doubled(j12: i8, m12: i8, q: i8, ju2: i8) -> f64 {
    let j1 = j12 as f64 / 2.0;
    let m = (m12 + 2 * q as i8) as f64 / 2.0; // total M = m1 + q
    match (ju2 - j12, q) {
        (2, 1) => ((j1 + m) * (j1 + m + 1.0) / ((2.0 * j1 + 1.0) * (2.0 * j1 + 2.0))).sqrt(),
        (2, 0) => ((j1 - m + 1.0) * (j1 + m + 1.0) / ((2.0 * j1 + 1.0) * (j1 + 1.0))).sqrt(),
        (2, -1) => ((j1 - m) * (j1 - m + 1.0) / ((2.0 * j1 + 1.0) * (2.0 * j1 + 2.0))).sqrt(),
        (0, 1) => -((j1 + m) * (j1 - m + 1.0) / (2.0 * j1 * (j1 + 1.0))).sqrt(),
        (0, 0) => m / (j1 * (j1 + 1.0)).sqrt(),
        (0, -1) => ((j1 - m) * (j1 + m + 1.0) / (2.0 * j1 * (j1 + 1.0))).sqrt(),
        (-2, 1) => ((j1 - m) * (j1 - m + 1.0) / (2.0 * j1 * (2.0 * j1 + 1.0))).sqrt(),
        (-2, 0) => -((j1 - m) * (j1 + m) / (j1 * (2.0 * j1 + 1.0))).sqrt(),
        (-2, -1) => ((j1 + m + 1.0) * (j1 + m) / (2.0 * j1 * (2.0 * j1 + 1.0))).sqrt(),
        _ => unreachable!("selection rules checked by caller"),
    }
}

fn to_doubled(value: f64, what: &str) -> Result<i8> {
    let doubled = 2.0 * value;
    if !doubled.is_finite() || (doubled - doubled.round()).abs() > 1e-9 || doubled.abs() > 120.0 {
        return Err(Error::domain(format!(
            "{what} = {value} is not a half-integer in the supported range"
        )));
    }
    Ok(doubled.round() as i8)
}

/// One dipole transition channel |lower⟩ ↔ |upper⟩ with photon polarization
/// index q = m_u − m_l and its Clebsch–Gordan amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionChannel {
    pub lower: Sublevel,
    pub upper: Sublevel,
    pub q: i8,
    pub cgc: f64,
}

/// All dipole-allowed channels between two manifolds, ordered by
/// (upper m, then q). Errors if the pair is not electric-dipole connected
/// (needs ΔL = ±1 and |ΔJ| ≤ 1).
pub fn channel_table(lower: Manifold, upper: Manifold) -> Result<Vec<TransitionChannel>> {
    let dl = (lower.l() as i8 - upper.l() as i8).abs();
    let dj2 = (lower.j2() - upper.j2()).abs();
    if dl != 1 || dj2 > 2 {
        return Err(Error::config(format!(
            "{} and {} are not electric-dipole connected",
            lower.label(),
            upper.label()
        )));
    }
    let mut table = Vec::new();
    for u in upper.sublevels() {
        for q in [-1i8, 0, 1] {
            let m2_lower = u.m2() - 2 * q;
            let Ok(l) = Sublevel::new(lower, m2_lower) else { continue };
            let amp = cgc(lower.j(), l.m(), q, upper.j(), u.m())?;
            if amp != 0.0 {
                table.push(TransitionChannel { lower: l, upper: u, q, cgc: amp });
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Independent Clebsch–Gordan oracle: Racah's closed sum over one index,
    /// valid for arbitrary (j1, j2, J). Written directly from the factorial
    /// formula, sharing nothing with the table in `cgc_doubled`.
    fn racah_cgc(j1: f64, m1: f64, j2: f64, m2: f64, j: f64, m: f64) -> f64 {
        if (m1 + m2 - m).abs() > 1e-9 {
            return 0.0;
        }
        if j > j1 + j2 || j < (j1 - j2).abs() {
            return 0.0;
        }
        let fact = |x: f64| -> f64 {
            let n = x.round() as i64;
            assert!(n >= 0, "negative factorial argument {x}");
            (1..=n).map(|k| k as f64).product()
        };
        let delta = fact(j1 + j2 - j) * fact(j1 - j2 + j) * fact(-j1 + j2 + j)
            / fact(j1 + j2 + j + 1.0);
        let pre = ((2.0 * j + 1.0)
            * delta
            * fact(j1 + m1)
            * fact(j1 - m1)
            * fact(j2 + m2)
            * fact(j2 - m2)
            * fact(j + m)
            * fact(j - m))
        .sqrt();
        let k_min = (0.0f64).max(j2 - j - m1).max(j1 + m2 - j).round() as i64;
        let k_max = (j1 + j2 - j).min(j1 - m1).min(j2 + m2).round() as i64;
        let mut sum = 0.0;
        for k in k_min..=k_max {
            let kf = k as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign
                / (fact(kf)
                    * fact(j1 + j2 - j - kf)
                    * fact(j1 - m1 - kf)
                    * fact(j2 + m2 - kf)
                    * fact(j - j2 + m1 + kf)
                    * fact(j - j1 - m2 + kf));
        }
        pre * sum
    }

    const DIPOLE_PAIRS: [(Manifold, Manifold); 5] = [
        (Manifold::S12, Manifold::P12),
        (Manifold::S12, Manifold::P32),
        (Manifold::D32, Manifold::P12),
        (Manifold::D32, Manifold::P32),
        (Manifold::D52, Manifold::P32),
    ];

    #[test]
    fn cgc_matches_racah_oracle_on_all_dipole_channels() {
        for (lower, upper) in DIPOLE_PAIRS {
            for l in lower.sublevels() {
                for u in upper.sublevels() {
                    for q in [-1i8, 0, 1] {
                        if u.m2() != l.m2() + 2 * q {
                            continue;
                        }
                        let table = cgc(lower.j(), l.m(), q, upper.j(), u.m()).unwrap();
                        let oracle =
                            racah_cgc(lower.j(), l.m(), 1.0, q as f64, upper.j(), u.m());
                        assert_abs_diff_eq!(table, oracle, epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn cgc_matches_racah_oracle_on_integer_momenta() {
        // Exercise the three table rows away from the atomic J values too.
        for j1 in [1.0, 2.0, 3.0] {
            for ju in [j1 - 1.0, j1, j1 + 1.0] {
                for m1_2 in (-(2.0 * j1) as i32..=(2.0 * j1) as i32).step_by(2) {
                    let m1 = m1_2 as f64 / 2.0;
                    for q in [-1i8, 0, 1] {
                        let mu = m1 + q as f64;
                        if mu.abs() > ju {
                            continue;
                        }
                        let got = cgc(j1, m1, q, ju, mu).unwrap();
                        let want = racah_cgc(j1, m1, 1.0, q as f64, ju, mu);
                        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn squared_cgc_sums_to_one_per_upper_sublevel() {
        for (lower, upper) in DIPOLE_PAIRS {
            let table = channel_table(lower, upper).unwrap();
            for u in upper.sublevels() {
                let total: f64 = table
                    .iter()
                    .filter(|ch| ch.upper == u)
                    .map(|ch| ch.cgc * ch.cgc)
                    .sum();
                assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn channel_counts() {
        assert_eq!(channel_table(Manifold::D52, Manifold::P32).unwrap().len(), 12);
        assert_eq!(channel_table(Manifold::S12, Manifold::P32).unwrap().len(), 6);
        assert_eq!(channel_table(Manifold::S12, Manifold::P12).unwrap().len(), 4);
        assert_eq!(channel_table(Manifold::D32, Manifold::P12).unwrap().len(), 6);
        assert_eq!(channel_table(Manifold::D32, Manifold::P32).unwrap().len(), 10);
    }

    #[test]
    fn non_dipole_pairs_are_rejected() {
        assert!(channel_table(Manifold::D52, Manifold::P12).is_err());
        assert!(channel_table(Manifold::S12, Manifold::D32).is_err());
        assert!(channel_table(Manifold::S12, Manifold::S12).is_err());
    }

    #[test]
    fn frozen_cgc_values_for_the_beat_channels() {
        let c = |jl: f64, ml: f64, q: i8, ju: f64, mu: f64| cgc(jl, ml, q, ju, mu).unwrap();
        // 854-nm absorption, Λ configuration around P3/2 m=-1/2:
        assert_abs_diff_eq!(c(2.5, -1.5, 1, 1.5, -0.5), (2.0f64 / 5.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(c(2.5, 0.5, -1, 1.5, -0.5), (1.0f64 / 5.0).sqrt(), epsilon = 1e-15);
        // parasitic σ+ channel out of D5/2 m=+1/2:
        assert_abs_diff_eq!(c(2.5, 0.5, 1, 1.5, 1.5), (1.0f64 / 15.0).sqrt(), epsilon = 1e-15);
        // V configuration, stretched and partner channels:
        assert_abs_diff_eq!(c(2.5, -2.5, 1, 1.5, -1.5), (2.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(c(2.5, 1.5, -1, 1.5, 0.5), (2.0f64 / 5.0).sqrt(), epsilon = 1e-15);
        // 393-nm emission amplitudes P3/2 → S1/2 (as absorption S → P):
        assert_abs_diff_eq!(c(0.5, -0.5, 0, 1.5, -0.5), (2.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(c(0.5, 0.5, -1, 1.5, -0.5), (1.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(c(0.5, -0.5, -1, 1.5, -1.5), 1.0, epsilon = 1e-15);
        // Condon–Shortley sign on a J_u = J_l - 1, q = 0 channel:
        assert_abs_diff_eq!(c(1.5, -0.5, 0, 0.5, -0.5), -(1.0f64 / 3.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn cgc_selection_rules_and_domain_errors() {
        assert_eq!(cgc(2.5, -1.5, 1, 1.5, 0.5).unwrap(), 0.0); // m_u != m_l + q
        assert_eq!(cgc(2.5, -2.5, -1, 1.5, -3.5).unwrap(), 0.0); // |m_u| > J_u
        assert_eq!(cgc(2.5, -1.5, 1, 0.5, -0.5).unwrap(), 0.0); // |ΔJ| = 2
        assert_eq!(cgc(0.0, 0.0, 0, 0.0, 0.0).unwrap(), 0.0); // 0 -> 0 forbidden
        assert!(cgc(-0.5, 0.5, 0, 1.5, 0.5).is_err()); // negative J
        assert!(cgc(1.25, 0.25, 0, 1.5, 0.5).is_err()); // quarter-integer J
        assert!(cgc(1.5, 1.0, 0, 1.5, 1.0).is_err()); // m parity mismatch
        assert!(cgc(1.5, 0.5, 2, 1.5, 0.5).is_err()); // |q| > 1
    }

    #[test]
    fn larmor_frequency_examples() {
        let cfg = ZeemanConfig::new(2.798).unwrap();
        let nu = larmor_frequency(&cfg, Manifold::D52, 2);
        assert_abs_diff_eq!(nu, 9.3987585, epsilon = 1e-6);

        let cfg = ZeemanConfig::new(0.987).unwrap();
        let nu = larmor_frequency(&cfg, Manifold::D52, 2);
        assert_abs_diff_eq!(nu, 3.3154305, epsilon = 1e-6);
        // corresponding beat period in ns
        assert_abs_diff_eq!(1e3 / nu, 301.62, epsilon = 0.01);
    }

    #[test]
    fn larmor_is_linear_and_signed() {
        let cfg = ZeemanConfig::new(1.0).unwrap();
        let one = larmor_frequency(&cfg, Manifold::D52, 1);
        assert_abs_diff_eq!(larmor_frequency(&cfg, Manifold::D52, 4), 4.0 * one, epsilon = 1e-12);
        assert_abs_diff_eq!(larmor_frequency(&cfg, Manifold::D52, -2), -2.0 * one, epsilon = 1e-12);
        let cfg3 = ZeemanConfig::new(3.0).unwrap();
        assert_abs_diff_eq!(
            larmor_frequency(&cfg3, Manifold::D52, 1),
            3.0 * one,
            epsilon = 1e-12
        );
    }

    #[test]
    fn zeeman_shift_is_antisymmetric_in_m() {
        let cfg = ZeemanConfig::new(0.537).unwrap();
        for manifold in Manifold::ALL {
            for level in manifold.sublevels() {
                let mirror = Sublevel::new(manifold, -level.m2()).unwrap();
                assert_abs_diff_eq!(
                    zeeman_shift(&cfg, level),
                    -zeeman_shift(&cfg, mirror),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn zeeman_shift_value() {
        // S1/2 m=+1/2 at 1 G: 1.3996245 * 2 * 0.5 = 1.3996245 MHz
        let cfg = ZeemanConfig::new(1.0).unwrap();
        let s_up = Sublevel::new(Manifold::S12, 1).unwrap();
        assert_abs_diff_eq!(zeeman_shift(&cfg, s_up), MU_B_OVER_H_MHZ_PER_G, epsilon = 1e-12);
    }

    #[test]
    fn negative_field_rejected() {
        assert!(ZeemanConfig::new(-0.1).is_err());
        assert!(ZeemanConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn sublevel_indexing_round_trips() {
        let mut seen = Vec::new();
        for manifold in Manifold::ALL {
            for level in manifold.sublevels() {
                seen.push(level.index());
                assert_eq!(Sublevel::from_index(level.index()).unwrap(), level);
            }
        }
        let expected: Vec<usize> = (0..NUM_LEVELS).collect();
        assert_eq!(seen, expected);
        assert!(Sublevel::from_index(NUM_LEVELS).is_err());
    }

    #[test]
    fn invalid_sublevels_rejected() {
        assert!(Sublevel::new(Manifold::S12, 3).is_err()); // |m| > J
        assert!(Sublevel::new(Manifold::S12, 0).is_err()); // integer m on half-integer J
        assert!(Sublevel::new(Manifold::D52, -6).is_err());
    }
}
