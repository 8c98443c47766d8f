//! Adaptive Dormand–Prince 5(4) integrator with dense output, on complex
//! state vectors.
//!
//! This drives both the 18×18 density-matrix evolution (flattened to a
//! 324-component vector) and the pure-state segments of the trajectory
//! sampler. The controller is the classic embedded-pair design: the
//! fifth-order solution is advanced, the fourth-order error estimate sets the
//! step size, and each accepted step carries a quartic interpolant so
//! observables can be sampled on any grid without constraining the step
//! sequence.

use nalgebra::DVector;

use crate::{C64, Error, Result};

// Butcher tableau of the Dormand–Prince 5(4) pair.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] =
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];
// dense-output weights for the quartic interpolant
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Interpolant over one accepted step [t0, t0 + h].
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    rcont: [DVector<C64>; 5],
}

impl DenseStep {
    /// Solution at t ∈ [t0, t0 + h] (extrapolates smoothly slightly outside).
    pub fn eval(&self, t: f64) -> DVector<C64> {
        let theta = (t - self.t0) / self.h;
        let th1 = 1.0 - theta;
        // y = r1 + θ(r2 + (1−θ)(r3 + θ(r4 + (1−θ) r5)))
        let mut acc = self.rcont[4].clone() * C64::new(th1, 0.0);
        acc += &self.rcont[3];
        acc *= C64::new(theta, 0.0);
        acc += &self.rcont[2];
        acc *= C64::new(th1, 0.0);
        acc += &self.rcont[1];
        acc *= C64::new(theta, 0.0);
        acc += &self.rcont[0];
        acc
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.h
    }
}

/// Integrator configuration. Defaults: rtol 1e−8, atol 1e−12, generous step
/// budget.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub h_init: Option<f64>,
    pub max_steps: usize,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Dopri5 { rtol: 1e-8, atol: 1e-12, h_max: f64::INFINITY, h_init: None, max_steps: 2_000_000 }
    }
}

impl Dopri5 {
    /// Integrate y′ = f(t, y) from `t0` to `t_end` (t_end ≥ t0), invoking
    /// `on_step` with the dense interpolant of every accepted step. Returns
    /// the final state.
    pub fn solve<F, S>(
        &self,
        mut rhs: F,
        t0: f64,
        t_end: f64,
        y0: DVector<C64>,
        mut on_step: S,
    ) -> Result<DVector<C64>>
    where
        F: FnMut(f64, &DVector<C64>, &mut DVector<C64>),
        S: FnMut(&DenseStep),
    {
        if !(t_end >= t0) {
            return Err(Error::domain(format!("integration span [{t0}, {t_end}] is reversed")));
        }
        let dim = y0.len();
        let mut y = y0;
        let mut t = t0;
        if t_end == t0 {
            return Ok(y);
        }

        let mut k: Vec<DVector<C64>> = (0..7).map(|_| DVector::zeros(dim)).collect();
        rhs(t, &y, &mut k[0]);
        let mut h = self.h_init.unwrap_or_else(|| self.guess_h0(&y, &k[0], t_end - t0));
        h = h.min(self.h_max).min(t_end - t0);

        let mut y_stage = DVector::<C64>::zeros(dim);
        let mut steps = 0usize;
        loop {
            if steps >= self.max_steps {
                return Err(Error::numeric(format!(
                    "step budget {} exhausted at t = {t:.6} ns",
                    self.max_steps
                )));
            }
            if h < 1e-14 * (1.0 + t.abs()) {
                return Err(Error::numeric(format!("step size underflow at t = {t:.6} ns")));
            }
            let last = t + h >= t_end - 1e-14 * (1.0 + t_end.abs());
            if last {
                h = t_end - t;
            }

            // stages 2..7 (k1 carried over, FSAL)
            for s in 1..7 {
                y_stage.copy_from(&y);
                for (j, kj) in k.iter().enumerate().take(s) {
                    if A[s][j] != 0.0 {
                        y_stage.axpy(C64::new(h * A[s][j], 0.0), kj, C64::new(1.0, 0.0));
                    }
                }
                let (head, tail) = k.split_at_mut(s);
                let _ = head;
                rhs(t + C[s] * h, &y_stage, &mut tail[0]);
            }

            // fifth-order solution and embedded error
            let mut y_new = y.clone();
            for (j, kj) in k.iter().enumerate() {
                if B5[j] != 0.0 {
                    y_new.axpy(C64::new(h * B5[j], 0.0), kj, C64::new(1.0, 0.0));
                }
            }
            let mut err_sq = 0.0;
            for i in 0..dim {
                let mut e = C64::new(0.0, 0.0);
                for (j, kj) in k.iter().enumerate() {
                    let w = B5[j] - B4[j];
                    if w != 0.0 {
                        e += kj[i] * C64::new(h * w, 0.0);
                    }
                }
                let scale = self.atol + self.rtol * y[i].norm().max(y_new[i].norm());
                let r = e.norm() / scale;
                err_sq += r * r;
            }
            let err = (err_sq / dim as f64).sqrt();

            if err <= 1.0 {
                // accept; build the dense interpolant
                let ydiff = &y_new - &y;
                let bspl = &k[0] * C64::new(h, 0.0) - &ydiff;
                let mut r5 = DVector::<C64>::zeros(dim);
                for (j, kj) in k.iter().enumerate() {
                    if D[j] != 0.0 {
                        r5.axpy(C64::new(h * D[j], 0.0), kj, C64::new(1.0, 0.0));
                    }
                }
                let r4 = &ydiff - &k[6] * C64::new(h, 0.0) - &bspl;
                let dense = DenseStep {
                    t0: t,
                    h,
                    rcont: [y.clone(), ydiff, bspl, r4, r5],
                };
                on_step(&dense);

                t += h;
                std::mem::swap(&mut y, &mut y_new);
                k.swap(0, 6); // FSAL: k7 of this step is k1 of the next
                if last {
                    return Ok(y);
                }
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h = (h * factor).min(self.h_max);
            } else {
                let factor = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                h *= factor;
                // k1 is still valid for the retried step
            }
            steps += 1;
        }
    }

    /// Integrate and return the solution sampled at the given ascending
    /// times (all within [t0, t_end]).
    pub fn sample<F>(
        &self,
        rhs: F,
        t0: f64,
        t_end: f64,
        y0: DVector<C64>,
        times: &[f64],
    ) -> Result<Vec<DVector<C64>>>
    where
        F: FnMut(f64, &DVector<C64>, &mut DVector<C64>),
    {
        for w in times.windows(2) {
            if w[1] < w[0] {
                return Err(Error::domain("sample times must be ascending"));
            }
        }
        if let (Some(&first), Some(&last)) = (times.first(), times.last()) {
            if first < t0 - 1e-12 || last > t_end + 1e-12 {
                return Err(Error::domain(format!(
                    "sample times [{first}, {last}] outside integration span [{t0}, {t_end}]"
                )));
            }
        }
        let mut out: Vec<DVector<C64>> = Vec::with_capacity(times.len());
        let mut idx = 0;
        let y_end = self.solve(rhs, t0, t_end, y0, |dense| {
            while idx < times.len() && times[idx] <= dense.t_end() + 1e-12 {
                out.push(dense.eval(times[idx]));
                idx += 1;
            }
        })?;
        // numerical edge: a final sample time equal to t_end
        while idx < times.len() {
            out.push(y_end.clone());
            idx += 1;
        }
        Ok(out)
    }

    fn guess_h0(&self, y: &DVector<C64>, dy: &DVector<C64>, span: f64) -> f64 {
        let ny = y.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let nd = dy.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let h = if nd > 1e-12 { 0.01 * (ny.max(self.atol) / nd) } else { span / 100.0 };
        h.clamp(1e-8, span / 10.0)
    }
}

/// One classical fourth-order Runge–Kutta step (fixed size), for short
/// time-dependent segments where adaptivity is unnecessary.
pub fn rk4_step<F>(mut rhs: F, t: f64, y: &DVector<C64>, h: f64) -> DVector<C64>
where
    F: FnMut(f64, &DVector<C64>, &mut DVector<C64>),
{
    let dim = y.len();
    let mut k1 = DVector::zeros(dim);
    let mut k2 = DVector::zeros(dim);
    let mut k3 = DVector::zeros(dim);
    let mut k4 = DVector::zeros(dim);
    rhs(t, y, &mut k1);
    let y2 = y + &k1 * C64::new(h / 2.0, 0.0);
    rhs(t + h / 2.0, &y2, &mut k2);
    let y3 = y + &k2 * C64::new(h / 2.0, 0.0);
    rhs(t + h / 2.0, &y3, &mut k3);
    let y4 = y + &k3 * C64::new(h, 0.0);
    rhs(t + h, &y4, &mut k4);
    y + (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * C64::new(h / 6.0, 0.0)
}
