//! Nonlinear least-squares extraction of decay time, beat frequency,
//! visibility, and phase — with 1σ uncertainties from the residual-scaled
//! covariance, matching the parenthetical-error convention of the analysis
//! this reproduces.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::amplitude::wrap_angle;
use crate::histogram::Histogram;
use crate::master::{self, Scenario};
use crate::{Error, Result};

const TWO_PI: f64 = std::f64::consts::TAU;
/// MHz·ns → rad conversion inside the beat argument.
const MHZ_NS: f64 = 1e-3 * TWO_PI;

/// A parametric model family: value and analytic gradient per sample point.
pub trait FitModel: Sync {
    fn names(&self) -> &'static [&'static str];
    fn value(&self, x: f64, p: &[f64]) -> f64;
    /// ∂value/∂p_k written into `out` (length = parameter count).
    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]);
    fn param_count(&self) -> usize {
        self.names().len()
    }
}

/// `A·e^{−t/τ} + b`, parameters `[a, tau_ns, b]`.
pub struct DecayModel;

impl FitModel for DecayModel {
    fn names(&self) -> &'static [&'static str] {
        &["amplitude", "tau_ns", "background"]
    }

    fn value(&self, t: f64, p: &[f64]) -> f64 {
        p[0] * (-t / p[1]).exp() + p[2]
    }

    fn gradient(&self, t: f64, p: &[f64], out: &mut [f64]) {
        let e = (-t / p[1]).exp();
        out[0] = e;
        out[1] = p[0] * e * t / (p[1] * p[1]);
        out[2] = 1.0;
    }
}

/// `b + A·e^{−t/τ}·(1 + V·cos(2πν·10⁻³·t + φ))`,
/// parameters `[a, tau_ns, visibility, nu_mhz, phase, background]`.
pub struct BeatShape;

impl FitModel for BeatShape {
    fn names(&self) -> &'static [&'static str] {
        &["amplitude", "tau_ns", "visibility", "nu_mhz", "phase", "background"]
    }

    fn value(&self, t: f64, p: &[f64]) -> f64 {
        let env = p[0] * (-t / p[1]).exp();
        p[5] + env * (1.0 + p[2] * (MHZ_NS * p[3] * t + p[4]).cos())
    }

    fn gradient(&self, t: f64, p: &[f64], out: &mut [f64]) {
        let e = (-t / p[1]).exp();
        let theta = MHZ_NS * p[3] * t + p[4];
        let (sin, cos) = theta.sin_cos();
        let env = p[0] * e;
        out[0] = e * (1.0 + p[2] * cos);
        out[1] = env * (1.0 + p[2] * cos) * t / (p[1] * p[1]);
        out[2] = env * cos;
        out[3] = -env * p[2] * sin * MHZ_NS * t;
        out[4] = -env * p[2] * sin;
        out[5] = 1.0;
    }
}

/// `offset + amplitude·cos(x + phase)`, parameters
/// `[offset, amplitude, phase]`; `x` is already an angle in radians.
pub struct SinusoidModel;

impl FitModel for SinusoidModel {
    fn names(&self) -> &'static [&'static str] {
        &["offset", "amplitude", "phase"]
    }

    fn value(&self, x: f64, p: &[f64]) -> f64 {
        p[0] + p[1] * (x + p[2]).cos()
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let (sin, cos) = (x + p[2]).sin_cos();
        out[0] = 1.0;
        out[1] = cos;
        out[2] = -p[1] * sin;
    }
}

/// The fitted beat, in physical names. Parameter order matches [`BeatShape`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeatModel {
    pub amplitude: f64,
    pub tau_ns: f64,
    pub visibility: f64,
    pub nu_mhz: f64,
    pub phase: f64,
    pub background: f64,
}

impl BeatModel {
    pub fn from_params(p: &[f64]) -> Self {
        BeatModel {
            amplitude: p[0],
            tau_ns: p[1],
            visibility: p[2],
            nu_mhz: p[3],
            phase: p[4],
            background: p[5],
        }
    }

    pub fn to_params(self) -> [f64; 6] {
        [self.amplitude, self.tau_ns, self.visibility, self.nu_mhz, self.phase, self.background]
    }

    pub fn value(&self, t: f64) -> f64 {
        BeatShape.value(t, &self.to_params())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub names: Vec<&'static str>,
    pub params: Vec<f64>,
    /// 1σ uncertainties from the covariance of the linearized problem,
    /// scaled by the reduced chi-square.
    pub sigmas: Vec<f64>,
    pub chi2: f64,
    pub reduced_chi2: f64,
    pub iterations: usize,
    pub converged: bool,
    pub covariance: DMatrix<f64>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| *n == name).map(|i| self.params[i])
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| *n == name).map(|i| self.sigmas[i])
    }
}

/// Box constraints; trial steps are clamped into the box.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Bounds { lower: vec![f64::NEG_INFINITY; n], upper: vec![f64::INFINITY; n] }
    }

    pub fn clamp(&self, p: &mut [f64]) {
        for ((v, lo), hi) in p.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    fn admits(&self, p: &[f64]) -> bool {
        p.iter().zip(&self.lower).zip(&self.upper).all(|((v, lo), hi)| *v >= *lo && *v <= *hi)
    }
}

/// Inverse-variance weights for count data: 1/max(y, 1).
pub fn poisson_weights(y: &[f64]) -> Vec<f64> {
    y.iter().map(|v| 1.0 / v.max(1.0)).collect()
}

const MAX_ITERATIONS: usize = 200;
const COST_TOLERANCE: f64 = 1e-10;
const GRADIENT_TOLERANCE: f64 = 1e-8;

/// Damped Gauss–Newton (Levenberg–Marquardt) minimization of
/// Σ wᵢ (yᵢ − f(xᵢ))². Converged when the relative cost change drops below
/// 1e−10 or the gradient ∞-norm below 1e−8; hitting the iteration cap
/// returns a result flagged unconverged rather than an error.
pub fn least_squares(
    model: &dyn FitModel,
    x: &[f64],
    y: &[f64],
    weights: &[f64],
    initial_guess: &[f64],
    bounds: &Bounds,
) -> Result<FitResult> {
    let np = model.param_count();
    let n = x.len();
    if y.len() != n || weights.len() != n {
        return Err(Error::fit("x, y, and weights must have equal length".to_string()));
    }
    if n < np {
        return Err(Error::fit(format!("{n} data points cannot constrain {np} parameters")));
    }
    if initial_guess.len() != np {
        return Err(Error::fit(format!(
            "initial guess has {} entries, model needs {np}",
            initial_guess.len()
        )));
    }
    if initial_guess.iter().any(|v| !v.is_finite()) {
        return Err(Error::fit("initial guess must be finite".to_string()));
    }
    if !bounds.admits(initial_guess) {
        return Err(Error::fit("initial guess violates the bounds".to_string()));
    }

    let mut p = initial_guess.to_vec();
    let mut cost = weighted_cost(model, x, y, weights, &p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    let mut grad = DVector::zeros(np);
    let mut normal = DMatrix::zeros(np, np);
    let mut row = vec![0.0; np];

    while iterations < MAX_ITERATIONS {
        // assemble JᵀWJ and JᵀWr at the current point
        normal.fill(0.0);
        grad.fill(0.0);
        for i in 0..n {
            model.gradient(x[i], &p, &mut row);
            let r = y[i] - model.value(x[i], &p);
            let w = weights[i];
            for a in 0..np {
                grad[a] += w * row[a] * r;
                for b in a..np {
                    normal[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..np {
            for b in 0..a {
                normal[(a, b)] = normal[(b, a)];
            }
        }
        if grad.amax() < GRADIENT_TOLERANCE {
            converged = true;
            break;
        }

        // damped solve; escalate λ on failure or on a rejected step
        let mut stepped = false;
        while lambda < 1e12 {
            let mut damped = normal.clone();
            for a in 0..np {
                let d = damped[(a, a)];
                damped[(a, a)] = d + lambda * d.max(1e-12);
            }
            let Some(chol) = Cholesky::new(damped) else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&grad);
            let mut trial = p.clone();
            for a in 0..np {
                trial[a] += delta[a];
            }
            bounds.clamp(&mut trial);
            let trial_cost = weighted_cost(model, x, y, weights, &trial);
            if trial_cost.is_finite() && trial_cost <= cost {
                let rel = (cost - trial_cost) / cost.max(1e-300);
                p = trial;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                stepped = true;
                if rel < COST_TOLERANCE {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        iterations += 1;
        if !stepped {
            // could not improve at any damping: either we are at a
            // flat/singular point (treat a tiny gradient-free cost as done)
            // or the normal equations are genuinely rank-deficient
            if cost < 1e-20 {
                converged = true;
                break;
            }
            if Cholesky::new(normal.clone()).is_none() {
                return Err(Error::fit(
                    "normal equations are singular: model is rank-deficient on this data"
                        .to_string(),
                ));
            }
            break;
        }
        if converged {
            break;
        }
    }

    // covariance of the linearized problem, scaled by reduced χ²
    let dof = (n - np).max(1);
    let reduced_chi2 = cost / dof as f64;
    let covariance = match Cholesky::new(normal.clone()) {
        Some(chol) => chol.inverse() * reduced_chi2,
        None => DMatrix::from_element(np, np, f64::NAN),
    };
    let sigmas = (0..np).map(|a| covariance[(a, a)].max(0.0).sqrt()).collect();

    Ok(FitResult {
        names: model.names().to_vec(),
        params: p,
        sigmas,
        chi2: cost,
        reduced_chi2,
        iterations,
        converged,
        covariance,
    })
}

fn weighted_cost(model: &dyn FitModel, x: &[f64], y: &[f64], w: &[f64], p: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.len() {
        let r = y[i] - model.value(x[i], p);
        acc += w[i] * r * r;
    }
    acc
}

/// Exponential envelope + background fit of a histogram.
///
/// Count data gets two passes: the first weighted by the observed counts,
/// the second by the first-pass model. Weighting by observed counts alone
/// systematically drags the fit toward downward fluctuations (low bins get
/// the highest weight); the model-weighted second pass removes that bias.
pub fn fit_decay(h: &Histogram) -> Result<FitResult> {
    let y = h.counts_f64();
    if y.iter().all(|v| *v == 0.0) {
        return Err(Error::fit("histogram is all zeros; nothing to fit".to_string()));
    }
    let t = h.bin_centers();
    let first = fit_decay_samples(&t, &y, &poisson_weights(&y))?;
    let w = model_weights(&DecayModel, &t, &first.params);
    let bounds = decay_bounds(&t);
    least_squares(&DecayModel, &t, &y, &w, &first.params, &bounds)
}

pub fn fit_decay_samples(t: &[f64], y: &[f64], weights: &[f64]) -> Result<FitResult> {
    if t.is_empty() {
        return Err(Error::fit("no data to fit".to_string()));
    }
    let tail = y.len().saturating_sub(y.len() / 10 + 1);
    let b0 = y[tail..].iter().sum::<f64>() / (y.len() - tail) as f64;
    let head = y.len() / 10 + 1;
    let head_mean = y[..head].iter().sum::<f64>() / head as f64;
    let peak = y.iter().cloned().fold(f64::MIN, f64::max);
    let a0 = (head_mean - b0).max(1e-3 * peak.abs().max(1e-6));
    let span = t[t.len() - 1] - t[0];
    let tau0 = (span / 3.0).max(1.0);
    let guess = [a0, tau0, b0.max(0.0)];
    least_squares(&DecayModel, t, y, weights, &guess, &decay_bounds(t))
}

/// τ beyond ~10 data spans is indistinguishable from a constant; capping it
/// keeps the A–b split identifiable on featureless data.
fn decay_bounds(t: &[f64]) -> Bounds {
    let span = t[t.len() - 1] - t[0];
    Bounds {
        lower: vec![0.0, 1e-3, 0.0],
        upper: vec![f64::INFINITY, 10.0 * span.max(1.0), f64::INFINITY],
    }
}

/// Inverse-variance weights taken from a fitted model instead of the data.
fn model_weights(model: &dyn FitModel, t: &[f64], p: &[f64]) -> Vec<f64> {
    t.iter().map(|ti| 1.0 / model.value(*ti, p).max(1.0)).collect()
}

/// Full beat-model fit of a histogram. The beat frequency is seeded from the
/// periodogram peak of the envelope-subtracted data unless `nu_hint` (MHz)
/// is given; if the spectrum shows no usable peak the fit refuses and asks
/// for a hint.
pub fn fit_beat(h: &Histogram, nu_hint: Option<f64>) -> Result<FitResult> {
    let y = h.counts_f64();
    if y.iter().all(|v| *v == 0.0) {
        return Err(Error::fit("histogram is all zeros; nothing to fit".to_string()));
    }
    let t = h.bin_centers();
    let first = fit_beat_samples(&t, &y, &poisson_weights(&y), nu_hint)?;
    // model-weighted second pass, as in fit_decay
    let w = model_weights(&BeatShape, &t, &first.params);
    let bounds = beat_bounds(&t);
    let mut second = least_squares(&BeatShape, &t, &y, &w, &first.params, &bounds)?;
    second.params[4] = branch_near(second.params[4], first.params[4]);
    Ok(second)
}

pub fn fit_beat_samples(
    t: &[f64],
    y: &[f64],
    weights: &[f64],
    nu_hint: Option<f64>,
) -> Result<FitResult> {
    if t.len() < 8 {
        return Err(Error::fit("too few samples for a beat fit".to_string()));
    }
    let envelope = fit_decay_samples(t, y, weights)?;
    let (a0, tau0, b0) = (envelope.params[0], envelope.params[1], envelope.params[2]);

    let nu0 = match nu_hint {
        Some(nu) if nu > 0.0 && nu.is_finite() => nu,
        Some(nu) => return Err(Error::fit(format!("nu_hint {nu} MHz must be positive"))),
        None => spectral_peak_mhz(t, y, &envelope).ok_or_else(|| {
            Error::fit(
                "no clear spectral peak above the noise floor; this fit requires nu_hint"
                    .to_string(),
            )
        })?,
    };

    // quadrature projection at ν₀ seeds visibility and phase
    let (mut c, mut s, mut norm) = (0.0, 0.0, 0.0);
    for (ti, yi) in t.iter().zip(y) {
        let env = DecayModel.value(*ti, &envelope.params) - b0;
        let arg = MHZ_NS * nu0 * ti;
        let resid = yi - DecayModel.value(*ti, &envelope.params);
        c += resid * arg.cos();
        s += resid * arg.sin();
        norm += env.max(0.0);
    }
    let phi0 = (-s).atan2(c);
    let v0 = (2.0 * (c * c + s * s).sqrt() / norm.max(1e-12)).clamp(0.05, 1.0);

    let guess = [a0.max(1e-9), tau0, v0, nu0, phi0, b0.max(0.0)];
    let bounds = beat_bounds(t);
    let mut result = least_squares(&BeatShape, t, y, weights, &guess, &bounds)?;
    result.params[4] = branch_near(result.params[4], phi0);
    Ok(result)
}

/// Box for the beat model. Unlike the pure decay, a far-out τ stays
/// identifiable here — the modulation term keeps A separate from b — so the
/// cap is loose; it only has to stop τ from running off to infinity on data
/// whose envelope is genuinely flat.
fn beat_bounds(t: &[f64]) -> Bounds {
    let span = t[t.len() - 1] - t[0];
    let nyquist = 0.5e3 / (t[1] - t[0]);
    Bounds {
        lower: vec![0.0, 1e-3, 0.0, 1e-6, f64::NEG_INFINITY, 0.0],
        upper: vec![
            f64::INFINITY,
            50.0 * span.max(1.0),
            1.0,
            nyquist,
            f64::INFINITY,
            f64::INFINITY,
        ],
    }
}

/// Phase scans: y = offset + amplitude·cos(x + phase). The x values are
/// angles in radians. Returns amplitude ≥ 0 with the phase adjusted to
/// compensate, on the branch nearest the projection seed.
pub fn fit_sinusoid(x_phases: &[f64], y_values: &[f64]) -> Result<FitResult> {
    let n = x_phases.len();
    if n < 4 {
        return Err(Error::fit(format!("need at least 4 phase points, got {n}")));
    }
    let spread = x_phases.iter().cloned().fold(f64::MIN, f64::max)
        - x_phases.iter().cloned().fold(f64::MAX, f64::min);
    if spread < 1e-9 {
        return Err(Error::fit("phase points are degenerate: no spread in x".to_string()));
    }
    let mean = y_values.iter().sum::<f64>() / n as f64;
    let (mut c, mut s) = (0.0, 0.0);
    for (xi, yi) in x_phases.iter().zip(y_values) {
        c += (yi - mean) * xi.cos();
        s += (yi - mean) * xi.sin();
    }
    let phi0 = (-s).atan2(c);
    let amp0 = 2.0 * (c * c + s * s).sqrt() / n as f64;
    let guess = [mean, amp0.max(1e-12), phi0];
    let weights = vec![1.0; n];
    let mut result =
        least_squares(&SinusoidModel, x_phases, y_values, &weights, &guess, &Bounds::unbounded(3))?;
    if result.params[1] < 0.0 {
        result.params[1] = -result.params[1];
        result.params[2] += std::f64::consts::PI;
    }
    result.params[2] = branch_near(result.params[2], phi0);
    Ok(result)
}

/// Modulation depth of a fitted sinusoid: V = |amplitude|/offset and the
/// max/min intensity ratio (1+V)/(1−V).
pub fn sinusoid_visibility(result: &FitResult) -> (f64, f64) {
    let v = (result.params[1] / result.params[0]).abs();
    (v, (1.0 + v) / (1.0 - v).max(1e-12))
}

/// Move `phase` onto the 2π branch nearest `anchor`.
fn branch_near(phase: f64, anchor: f64) -> f64 {
    anchor + wrap_angle(phase - anchor)
}

/// Periodogram of the envelope-subtracted data; returns the interpolated
/// peak frequency when it stands clearly above the noise floor.
fn spectral_peak_mhz(t: &[f64], y: &[f64], envelope: &FitResult) -> Option<f64> {
    let n = t.len();
    let dt = t[1] - t[0];
    let resid: Vec<f64> =
        t.iter().zip(y).map(|(ti, yi)| yi - DecayModel.value(*ti, &envelope.params)).collect();
    let kmax = n / 2;
    if kmax < 3 {
        return None;
    }
    let mut power = Vec::with_capacity(kmax);
    for k in 1..=kmax {
        let (mut c, mut s) = (0.0, 0.0);
        for (i, r) in resid.iter().enumerate() {
            let arg = TWO_PI * k as f64 * i as f64 / n as f64;
            c += r * arg.cos();
            s += r * arg.sin();
        }
        power.push(c * c + s * s);
    }
    let mut sorted = power.clone();
    sorted.sort_by(f64::total_cmp);
    let noise = sorted[sorted.len() / 2].max(1e-300);
    let (peak_idx, peak_power) =
        power.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    if *peak_power < 10.0 * noise {
        return None;
    }
    // parabolic interpolation on log power around the peak bin
    let k = peak_idx as f64 + 1.0;
    let k_refined = if peak_idx > 0 && peak_idx + 1 < power.len() {
        let (lm, l0, lp) = (
            power[peak_idx - 1].max(1e-300).ln(),
            power[peak_idx].ln(),
            power[peak_idx + 1].max(1e-300).ln(),
        );
        let denom = lm - 2.0 * l0 + lp;
        if denom.abs() > 1e-12 { k + 0.5 * (lm - lp) / denom } else { k }
    } else {
        k
    };
    Some(k_refined / (n as f64 * dt) * 1e3)
}

/// One point of a visibility-vs-population scan.
#[derive(Debug, Clone)]
pub struct VisibilityScan {
    pub populations: Vec<f64>,
    pub visibilities: Vec<f64>,
    /// Interpolated (population, visibility) maximum; `None` when the curve
    /// has a single point.
    pub argmax: Option<(f64, f64)>,
}

/// Simulate the template scenario at each initial population of the weaker
/// path (ρ₂), fit the beat in the detected flux, and collect visibility
/// against population. The maximum is refined by parabolic interpolation
/// when it falls at an interior point.
pub fn visibility_scan(template: &Scenario, populations: &[f64]) -> Result<VisibilityScan> {
    if populations.is_empty() {
        return Err(Error::fit("no populations requested".to_string()));
    }
    for p in populations {
        if !(*p > 0.0 && *p < 1.0) {
            return Err(Error::fit(format!("population {p} must lie strictly inside (0, 1)")));
        }
    }
    let visibilities: Vec<f64> = populations
        .par_iter()
        .map(|&pop| -> Result<f64> {
            let mut sc = template.clone();
            sc.initial = sc.initial.with_populations(1.0 - pop, pop)?;
            let result = beat_fit_of_flux(&sc)
                .map_err(|e| Error::fit(format!("population {pop}: {e}")))?;
            Ok(result.params[2])
        })
        .collect::<Result<Vec<f64>>>()?;

    let argmax = interpolated_argmax(populations, &visibilities);
    Ok(VisibilityScan { populations: populations.to_vec(), visibilities, argmax })
}

/// Evolve a scenario and fit the beat model to its detected flux over the
/// flat-top window of the pulse.
pub fn beat_fit_of_flux(sc: &Scenario) -> Result<FitResult> {
    let evo = master::evolve(sc)?;
    let flux = master::detection_flux(sc, &evo)?;
    let env = &sc.drive.envelope;
    let window_start = env.t_on_ns + env.rise_ns + 5.0;
    let window_end = (env.t_on_ns + env.duration_ns).min(sc.grid.t_max_ns);
    let mut t = Vec::new();
    let mut y = Vec::new();
    for (ti, fi) in evo.times.iter().zip(&flux) {
        if *ti >= window_start && *ti <= window_end {
            t.push(*ti);
            y.push(*fi);
        }
    }
    if t.len() < 8 {
        return Err(Error::fit("pulse window too short for a beat fit".to_string()));
    }
    let weights = vec![1.0; t.len()];
    let nu = sc.initial.beat_frequency_mhz(&sc.zeeman).abs();
    fit_beat_samples(&t, &y, &weights, Some(nu))
}

fn interpolated_argmax(x: &[f64], v: &[f64]) -> Option<(f64, f64)> {
    if x.len() < 2 {
        return None;
    }
    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // A fitted visibility can saturate at its bound over several scan points;
    // a parabola through such a plateau has no meaningful vertex, so treat the
    // tied run as the answer and report its midpoint.
    let tol = 1e-9 * vmax.abs().max(1.0);
    let first = v.iter().position(|&y| vmax - y <= tol).unwrap();
    let last = v.iter().rposition(|&y| vmax - y <= tol).unwrap();
    if first != last {
        return Some((0.5 * (x[first] + x[last]), vmax));
    }
    let m = first;
    if m == 0 || m == x.len() - 1 {
        return Some((x[m], v[m]));
    }
    // parabola through the three points around the maximum
    let (x0, x1, x2) = (x[m - 1], x[m], x[m + 1]);
    let (v0, v1, v2) = (v[m - 1], v[m], v[m + 1]);
    let d1 = (v1 - v0) / (x1 - x0);
    let d2 = (v2 - v1) / (x2 - x1);
    let curv = (d2 - d1) / (x2 - x0);
    if curv >= -1e-15 {
        return Some((x1, v1));
    }
    // vertex of the Newton-form parabola v0 + d1·(x−x0) + curv·(x−x0)(x−x1)
    let xs = (0.5 * (x0 + x1 - d1 / curv)).clamp(x0, x2);
    let vs = v0 + d1 * (xs - x0) + curv * (xs - x0) * (xs - x1);
    Some((xs, vs))
}
