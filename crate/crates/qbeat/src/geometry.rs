//! Emission geometry: dipole radiation patterns, the H/V polarization
//! analyzer, and integration over the collection cone of the objective.
//!
//! Coordinates: the magnetic field defines ẑ; the objective looks along x̂,
//! i.e. perpendicular to the field. A photon direction is (θ, φ) with polar
//! angle θ measured from ẑ and azimuth φ from x̂, so the center of the
//! collection cone is (θ, φ) = (π/2, 0).
//!
//! Analyzer convention, anchored to the central ray: **H** transmits the
//! π-dipole field (polarization along the projection of ẑ), **V** transmits
//! the superposition (σ⁺ − σ⁻)/√2 of the circular emission components. Away
//! from the center the analyzer axes follow the local spherical basis, which
//! is what an aplanatic objective maps onto fixed axes behind the lens. With
//! this convention a rotating σ⁺/σ⁻ dipole produces V-analyzed intensity
//! ∝ 1 − V_c·cos of the rotation phase, where V_c is the cone-averaged
//! contrast returned by [`collection_visibility`].
//!
//! Intensities are normalized so that one photon per decay integrates to 1
//! over the full sphere summed over both analyzer outputs; the W matrices
//! returned by [`analyzer_overlap`] therefore give absolute collection
//! fractions.

use nalgebra::Matrix3;

use crate::amplitude::Scheme;
use crate::{C64, Error, Result};

/// Polarization analyzer output port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Analyzer {
    /// Passes π light at the cone center (field along the projection of ẑ).
    H,
    /// Passes the (σ⁺ − σ⁻)/√2 combination at the cone center.
    V,
}

impl Analyzer {
    pub fn label(self) -> &'static str {
        match self {
            Analyzer::H => "H",
            Analyzer::V => "V",
        }
    }
}

/// Column/row index of polarization q ∈ {−1, 0, +1} in 3×3 overlap matrices.
pub const fn q_index(q: i8) -> usize {
    (q + 1) as usize
}

/// Collection optics: an objective of the given numerical aperture looking
/// along x̂ (perpendicular to the field), followed by a polarization
/// analyzer and a photon counter of quantum efficiency `efficiency`
/// (detector + transmission losses lumped together).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectionGeometry {
    pub numerical_aperture: f64,
    pub analyzer: Analyzer,
    pub efficiency: f64,
}

impl CollectionGeometry {
    pub fn new(numerical_aperture: f64, analyzer: Analyzer, efficiency: f64) -> Result<Self> {
        check_na(numerical_aperture)?;
        if numerical_aperture >= 1.0 {
            return Err(Error::domain(format!(
                "numerical aperture {numerical_aperture} must be < 1"
            )));
        }
        if !(0.0..=1.0).contains(&efficiency) || !efficiency.is_finite() {
            return Err(Error::config(format!("detection efficiency {efficiency} must lie in [0, 1]")));
        }
        Ok(CollectionGeometry { numerical_aperture, analyzer, efficiency })
    }

    /// Overlap matrix of this objective/analyzer combination.
    pub fn overlap(&self) -> Result<Matrix3<C64>> {
        analyzer_overlap(self.analyzer, self.numerical_aperture)
    }
}

/// Fraction of the full sphere covered by a cone of numerical aperture `na`:
/// (1 − √(1 − NA²))/2.
pub fn solid_angle_fraction(na: f64) -> Result<f64> {
    check_na(na)?;
    Ok((1.0 - (1.0 - na * na).sqrt()) / 2.0)
}

fn check_na(na: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&na) || !na.is_finite() {
        return Err(Error::domain(format!("numerical aperture {na} must lie in [0, 1]")));
    }
    Ok(())
}

/// Transmitted field amplitude of a unit dipole with polarization index `q`
/// into direction (θ, φ) through the given analyzer. Squared magnitudes,
/// scaled by 3/8π, integrate to the per-analyzer detection probability.
pub fn detection_amplitude(analyzer: Analyzer, q: i8, theta: f64, phi: f64) -> C64 {
    let i = C64::i();
    let sqrt_half = std::f64::consts::FRAC_1_SQRT_2;
    match (analyzer, q) {
        (Analyzer::H, 0) => C64::new(theta.sin(), 0.0),
        (Analyzer::H, 1) => theta.cos() * sqrt_half * (i * phi).exp(),
        (Analyzer::H, -1) => theta.cos() * sqrt_half * (-i * phi).exp(),
        (Analyzer::V, 0) => C64::new(0.0, 0.0),
        (Analyzer::V, 1) => -i * sqrt_half * (i * phi).exp(),
        (Analyzer::V, -1) => i * sqrt_half * (-i * phi).exp(),
        _ => panic!("polarization index {q} not in -1..=1"),
    }
}

/// Angular intensity (probability per steradian) of a unit dipole of
/// polarization `q` behind the analyzer. Summed over both analyzers and
/// integrated over the sphere this is 1.
pub fn dipole_intensity(q: i8, theta: f64, phi: f64, analyzer: Analyzer) -> f64 {
    let a = detection_amplitude(analyzer, q, theta, phi);
    3.0 / (8.0 * std::f64::consts::PI) * a.norm_sqr()
}

/// Hermitian 3×3 overlap matrix W with entries
/// W[q, q′] = 3/8π ∫_cone A(q) A(q′)* dΩ
/// over the collection cone of aperture `na`, indexed via [`q_index`].
///
/// Diagonal entries are the collection fractions of the three dipole
/// components through the analyzer; off-diagonal entries weight the
/// interference between components. Computed by Gauss–Legendre quadrature in
/// the cone angle times a periodic rule in the cone azimuth, with the order
/// doubled until entries change by less than 1e−9.
pub fn analyzer_overlap(analyzer: Analyzer, na: f64) -> Result<Matrix3<C64>> {
    check_na(na)?;
    let alpha = na.asin();
    let mut order = 8;
    let mut last = overlap_with_order(analyzer, alpha, order);
    loop {
        order *= 2;
        let next = overlap_with_order(analyzer, alpha, order);
        let delta = (&next - &last).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if delta < 1e-9 {
            return Ok(next);
        }
        if order > 4096 {
            return Err(Error::numeric(format!(
                "analyzer overlap quadrature did not converge (order {order}, delta {delta:.2e})"
            )));
        }
        last = next;
    }
}

fn overlap_with_order(analyzer: Analyzer, alpha: f64, order: usize) -> Matrix3<C64> {
    let (nodes, weights) = gauss_legendre(order);
    let n_psi = 2 * order.max(4);
    let mut w = Matrix3::<C64>::zeros();
    // cone angle χ from the x̂ axis, mapped from [-1, 1] to [0, α]
    for (&x, &gw) in nodes.iter().zip(&weights) {
        let chi = 0.5 * alpha * (x + 1.0);
        let jac = 0.5 * alpha * chi.sin() * gw;
        for k in 0..n_psi {
            let psi = 2.0 * std::f64::consts::PI * k as f64 / n_psi as f64;
            let pw = 2.0 * std::f64::consts::PI / n_psi as f64;
            // direction in field coordinates: k̂ = cosχ x̂ + sinχ (cosψ ŷ + sinψ ẑ)
            let kx = chi.cos();
            let ky = chi.sin() * psi.cos();
            let kz = chi.sin() * psi.sin();
            let theta = kz.clamp(-1.0, 1.0).acos();
            let phi = ky.atan2(kx);
            let a: Vec<C64> = [-1i8, 0, 1]
                .iter()
                .map(|&q| detection_amplitude(analyzer, q, theta, phi))
                .collect();
            for r in 0..3 {
                for c in 0..3 {
                    w[(r, c)] += jac * pw * a[r] * a[c].conj();
                }
            }
        }
    }
    w *= C64::new(3.0 / (8.0 * std::f64::consts::PI), 0.0);
    // enforce exact Hermiticity against round-off
    for r in 0..3 {
        for c in (r + 1)..3 {
            let avg = 0.5 * (w[(r, c)] + w[(c, r)].conj());
            w[(r, c)] = avg;
            w[(c, r)] = avg.conj();
        }
        w[(r, r)] = C64::new(w[(r, r)].re, 0.0);
    }
    w
}

/// Beat contrast surviving the finite collection cone.
///
/// The Λ beat lives in the shared P₃/₂ population before emission, so every
/// direction carries the full modulation and the cone average is 1 for any
/// aperture. The V beat is an interference of σ⁺/σ⁻ *emission* amplitudes
/// whose relative phase winds as e^{2iφ} around the field axis; averaging it
/// over the cone leaves the contrast |W_V[+1,−1]| normalized by the mean σ
/// collection fraction, which approaches 1 only for a pencil cone.
pub fn collection_visibility(scheme: Scheme, na: f64) -> Result<f64> {
    check_na(na)?;
    match scheme {
        Scheme::Lambda => Ok(1.0),
        Scheme::V => {
            if na == 0.0 {
                return Ok(1.0);
            }
            let w = analyzer_overlap(Analyzer::V, na)?;
            let cross = w[(q_index(1), q_index(-1))].norm();
            let diag = 0.5 * (w[(q_index(1), q_index(1))].re + w[(q_index(-1), q_index(-1))].re);
            if diag <= 0.0 {
                return Err(Error::numeric(
                    "σ collection fraction vanished in visibility computation",
                ));
            }
            Ok(cross / diag)
        }
    }
}

/// Gauss–Legendre nodes and weights on [−1, 1], by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2, "quadrature order must be at least 2");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess for the i-th positive root
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // evaluate P_n(x) and P_n'(x) by upward recurrence
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn solid_angle_fraction_values() {
        assert_abs_diff_eq!(solid_angle_fraction(0.4).unwrap(), 0.0417424, epsilon = 1e-6);
        assert_abs_diff_eq!(solid_angle_fraction(1.0).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(solid_angle_fraction(0.0).unwrap(), 0.0, epsilon = 1e-15);
        assert!(solid_angle_fraction(1.2).is_err());
        assert!(solid_angle_fraction(-0.1).is_err());
    }

    #[test]
    fn central_ray_intensities() {
        let center = (std::f64::consts::FRAC_PI_2, 0.0);
        let norm = 3.0 / (8.0 * std::f64::consts::PI);
        // π light is fully H at the cone center
        assert_abs_diff_eq!(dipole_intensity(0, center.0, center.1, Analyzer::H), norm, epsilon = 1e-12);
        assert_abs_diff_eq!(dipole_intensity(0, center.0, center.1, Analyzer::V), 0.0, epsilon = 1e-12);
        // σ light splits: half its transverse intensity reaches V, none H
        assert_abs_diff_eq!(
            dipole_intensity(1, center.0, center.1, Analyzer::V),
            norm / 2.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(dipole_intensity(1, center.0, center.1, Analyzer::H), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn central_ray_v_amplitudes_are_antisymmetric() {
        // V is the (σ⁺ − σ⁻)/√2 projection at the center: equal magnitude,
        // opposite sign for the two circular components.
        let ap = detection_amplitude(Analyzer::V, 1, std::f64::consts::FRAC_PI_2, 0.0);
        let am = detection_amplitude(Analyzer::V, -1, std::f64::consts::FRAC_PI_2, 0.0);
        assert_abs_diff_eq!((ap + am).norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ap.norm(), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn full_sphere_normalization_per_polarization() {
        // one photon per decay: H + V intensity integrates to 1 over 4π
        let (nodes, weights) = gauss_legendre(40);
        for q in [-1i8, 0, 1] {
            let mut total = 0.0;
            for (&x, &w) in nodes.iter().zip(&weights) {
                let theta = (x + 1.0) * std::f64::consts::FRAC_PI_2;
                let jac = std::f64::consts::FRAC_PI_2 * theta.sin() * w;
                let n_phi = 64;
                for k in 0..n_phi {
                    let phi = 2.0 * std::f64::consts::PI * k as f64 / n_phi as f64;
                    let pw = 2.0 * std::f64::consts::PI / n_phi as f64;
                    total += jac
                        * pw
                        * (dipole_intensity(q, theta, phi, Analyzer::H)
                            + dipole_intensity(q, theta, phi, Analyzer::V));
                }
            }
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn overlap_matrices_match_closed_forms() {
        // Uniform cone integrals of the analyzer amplitudes have elementary
        // antiderivatives; compare the quadrature against them at NA = 0.4.
        let na: f64 = 0.4;
        let ca = (1.0 - na * na).sqrt(); // cos α
        let wv = analyzer_overlap(Analyzer::V, na).unwrap();
        let wh = analyzer_overlap(Analyzer::H, na).unwrap();

        let v_diag = 3.0 / 8.0 * (1.0 - ca);
        let v_cross = -3.0 / 8.0 * ca * (1.0 - ca);
        assert_abs_diff_eq!(wv[(q_index(1), q_index(1))].re, v_diag, epsilon = 1e-8);
        assert_abs_diff_eq!(wv[(q_index(-1), q_index(-1))].re, v_diag, epsilon = 1e-8);
        assert_abs_diff_eq!(wv[(q_index(1), q_index(-1))].re, v_cross, epsilon = 1e-8);
        assert_abs_diff_eq!(wv[(q_index(1), q_index(-1))].im, 0.0, epsilon = 1e-9);
        for q in [-1i8, 0, 1] {
            assert_abs_diff_eq!(wv[(q_index(0), q_index(q))].norm(), 0.0, epsilon = 1e-12);
        }

        let h_pi = (4.0 - 3.0 * ca - ca.powi(3)) / 8.0;
        let h_sigma = (2.0 - 3.0 * ca + ca.powi(3)) / 16.0;
        assert_abs_diff_eq!(wh[(q_index(0), q_index(0))].re, h_pi, epsilon = 1e-8);
        assert_abs_diff_eq!(wh[(q_index(1), q_index(1))].re, h_sigma, epsilon = 1e-8);
        assert_abs_diff_eq!(wh[(q_index(-1), q_index(-1))].re, h_sigma, epsilon = 1e-8);
        // π–σ cross terms cancel over the symmetric cone
        assert_abs_diff_eq!(wh[(q_index(0), q_index(1))].norm(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(wh[(q_index(0), q_index(-1))].norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn overlap_matrices_are_positive_semidefinite() {
        for analyzer in [Analyzer::H, Analyzer::V] {
            for na in [0.05, 0.4, 0.9] {
                let w = analyzer_overlap(analyzer, na).unwrap();
                let eig = nalgebra::SymmetricEigen::new(w.map(|z| z));
                for &lambda in eig.eigenvalues.iter() {
                    assert!(lambda > -1e-12, "negative eigenvalue {lambda} at NA {na}");
                }
            }
        }
    }

    #[test]
    fn collection_visibility_against_cone_average() {
        // Analytically the azimuthal average of the rotating-dipole
        // interference over the cone gives exactly cos α = √(1 − NA²).
        assert_abs_diff_eq!(collection_visibility(Scheme::V, 0.4).unwrap(), 0.9165151, epsilon = 1e-6);
        assert_abs_diff_eq!(collection_visibility(Scheme::V, 0.1).unwrap(), 0.9949874, epsilon = 1e-6);
        assert_abs_diff_eq!(collection_visibility(Scheme::V, 0.0).unwrap(), 1.0, epsilon = 1e-12);
        for na in [0.2, 0.5, 0.8] {
            let expect = (1.0f64 - na * na).sqrt();
            assert_abs_diff_eq!(collection_visibility(Scheme::V, na).unwrap(), expect, epsilon = 1e-6);
        }
    }

    #[test]
    fn collection_visibility_decreases_with_aperture() {
        let mut last = 1.0 + 1e-12;
        for na in [0.1, 0.2, 0.3, 0.4, 0.6, 0.8] {
            let v = collection_visibility(Scheme::V, na).unwrap();
            assert!(v < last, "visibility should fall with NA, got {v} after {last}");
            last = v;
        }
    }

    #[test]
    fn lambda_visibility_is_aperture_independent() {
        for na in [0.0, 0.2, 0.4, 0.9] {
            assert_abs_diff_eq!(collection_visibility(Scheme::Lambda, na).unwrap(), 1.0, epsilon = 0.0);
        }
        assert!(collection_visibility(Scheme::Lambda, 1.5).is_err());
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // order n is exact through degree 2n−1
        let (nodes, weights) = gauss_legendre(5);
        let integral: f64 =
            nodes.iter().zip(&weights).map(|(&x, &w)| w * x.powi(8)).sum();
        assert_abs_diff_eq!(integral, 2.0 / 9.0, epsilon = 1e-13);
        let total: f64 = weights.iter().sum();
        assert_abs_diff_eq!(total, 2.0, epsilon = 1e-13);
    }
}
