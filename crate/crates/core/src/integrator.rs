//! Dormand-Prince 5(4) integration with PI step-size control and cubic Hermite
//! dense output.

use crate::error::{Error, Result};

/// First-order system `y' = f(t, y)`.
pub trait OdeSystem {
    fn dimension(&self) -> usize;

    /// Writes `f(t, y)` into `dydt`. Both slices have length `dimension()`.
    fn rhs(&self, t: f64, y: &[f64], dydt: &mut [f64]);

    fn eval(&self, t: f64, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension()];
        self.rhs(t, y, &mut out);
        out
    }
}

impl<S: OdeSystem + ?Sized> OdeSystem for &S {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn rhs(&self, t: f64, y: &[f64], dydt: &mut [f64]) {
        (**self).rhs(t, y, dydt)
    }
}

/// Adapts a closure into an [`OdeSystem`].
pub struct FnSystem<F> {
    dimension: usize,
    f: F,
}

impl<F> FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    pub fn new(dimension: usize, f: F) -> Self {
        Self { dimension, f }
    }
}

impl<F> OdeSystem for FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn rhs(&self, t: f64, y: &[f64], dydt: &mut [f64]) {
        (self.f)(t, y, dydt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rel: 1e-6,
            abs: 1e-9,
        }
    }
}

impl Tolerances {
    pub fn new(rel: f64, abs: f64) -> Self {
        Self { rel, abs }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rel > 0.0 && self.abs > 0.0 && self.rel.is_finite() && self.abs.is_finite()) {
            return Err(Error::invalid(format!(
                "tolerances must be positive (rel {}, abs {})",
                self.rel, self.abs
            )));
        }
        Ok(())
    }
}

/// Time-ordered states with the vector field evaluated at each knot.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    derivatives: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Builds a trajectory, checking lengths, ordering and finiteness.
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>, derivatives: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::invalid("trajectory needs at least one sample"));
        }
        if times.len() != states.len() || times.len() != derivatives.len() {
            return Err(Error::invalid(format!(
                "trajectory length mismatch: {} times, {} states, {} derivatives",
                times.len(),
                states.len(),
                derivatives.len()
            )));
        }
        let dim = states[0].len();
        if states.iter().chain(&derivatives).any(|s| s.len() != dim) {
            return Err(Error::invalid("trajectory states have inconsistent dimensions"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("trajectory times must be strictly increasing"));
        }
        if !times.iter().all(|t| t.is_finite())
            || !states.iter().chain(&derivatives).flatten().all(|v| v.is_finite())
        {
            return Err(Error::invalid("trajectory contains non-finite entries"));
        }
        Ok(Self {
            times,
            states,
            derivatives,
        })
    }

    /// Derivatives are re-evaluated from `system` at every knot.
    pub fn from_states<S: OdeSystem + ?Sized>(
        system: &S,
        times: Vec<f64>,
        states: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let derivatives = times
            .iter()
            .zip(&states)
            .map(|(&t, y)| system.eval(t, y))
            .collect();
        Self::new(times, states, derivatives)
    }

    pub(crate) fn from_parts_unchecked(
        times: Vec<f64>,
        states: Vec<Vec<f64>>,
        derivatives: Vec<Vec<f64>>,
    ) -> Self {
        debug_assert!(times.len() == states.len() && times.len() == derivatives.len());
        Self {
            times,
            states,
            derivatives,
        }
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (self.times, self.states, self.derivatives)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn derivatives(&self) -> &[Vec<f64>] {
        &self.derivatives
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.states[0].len()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn last_state(&self) -> &[f64] {
        &self.states[self.states.len() - 1]
    }

    /// One component over all samples.
    pub fn component(&self, index: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[index]).collect()
    }

    /// State at `t`. Knots are returned exactly; between knots the cubic Hermite
    /// interpolant built from the stored states and derivatives is used.
    pub fn state_at(&self, t: f64) -> Result<Vec<f64>> {
        let (start, end) = (self.start(), self.end());
        if !(t >= start && t <= end) {
            return Err(Error::OutOfRange { time: t, start, end });
        }
        // index of the first knot with time > t
        let hi = self.times.partition_point(|&k| k <= t);
        let lo = hi - 1;
        if self.times[lo] == t || hi == self.times.len() {
            return Ok(self.states[lo].clone());
        }
        let (t0, t1) = (self.times[lo], self.times[hi]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let (y0, y1) = (&self.states[lo], &self.states[hi]);
        let (f0, f1) = (&self.derivatives[lo], &self.derivatives[hi]);
        Ok((0..y0.len())
            .map(|i| h00 * y0[i] + h * h10 * f0[i] + h01 * y1[i] + h * h11 * f1[i])
            .collect())
    }

    /// States at each query time.
    pub fn sample(&self, query_times: &[f64]) -> Result<Vec<Vec<f64>>> {
        query_times.iter().map(|&t| self.state_at(t)).collect()
    }

    /// Resamples onto `query_times`, producing a new trajectory.
    pub fn resample(&self, query_times: &[f64]) -> Result<Trajectory> {
        let states = self.sample(query_times)?;
        let derivatives = query_times
            .iter()
            .map(|&t| self.derivative_at(t))
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(query_times.to_vec(), states, derivatives)
    }

    fn derivative_at(&self, t: f64) -> Result<Vec<f64>> {
        let hi = self.times.partition_point(|&k| k <= t);
        let lo = hi.saturating_sub(1);
        if self.times[lo] == t || hi == self.times.len() {
            return Ok(self.derivatives[lo].clone());
        }
        let (t0, t1) = (self.times[lo], self.times[hi]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let s2 = s * s;
        let d00 = (6.0 * s2 - 6.0 * s) / h;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = (-6.0 * s2 + 6.0 * s) / h;
        let d11 = 3.0 * s2 - 2.0 * s;
        let (y0, y1) = (&self.states[lo], &self.states[hi]);
        let (f0, f1) = (&self.derivatives[lo], &self.derivatives[hi]);
        Ok((0..y0.len())
            .map(|i| d00 * y0[i] + d10 * f0[i] + d01 * y1[i] + d11 * f1[i])
            .collect())
    }
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// fifth-order weights minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_SCALE: f64 = 0.2;
const MAX_SCALE: f64 = 5.0;
const PI_BETA: f64 = 0.04;
const PI_ALPHA: f64 = 0.2 - 0.75 * PI_BETA;

struct Stepper<'a, S: ?Sized> {
    system: &'a S,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
}

impl<'a, S: OdeSystem + ?Sized> Stepper<'a, S> {
    fn new(system: &'a S) -> Self {
        let n = system.dimension();
        Self {
            system,
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
        }
    }

    /// One step from `(t, y)` with `k[0] = f(t, y)` already set. Leaves the
    /// fifth-order solution in `y_new`, its derivative in `k[6]`, and the
    /// embedded error estimate in `err`.
    fn step(&mut self, t: f64, y: &[f64], h: f64, y_new: &mut [f64], err: &mut [f64]) {
        let n = y.len();
        let Self { system, k, tmp } = self;
        let [k1, k2, k3, k4, k5, k6, k7] = k;

        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        system.rhs(t + C2 * h, tmp, k2);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        system.rhs(t + C3 * h, tmp, k3);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        system.rhs(t + C4 * h, tmp, k4);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        system.rhs(t + C5 * h, tmp, k5);
        for i in 0..n {
            tmp[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        system.rhs(t + h, tmp, k6);
        for i in 0..n {
            y_new[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        system.rhs(t + h, y_new, k7);
        for i in 0..n {
            err[i] = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
    }

    /// First-same-as-last: the end derivative becomes the next start derivative.
    fn advance(&mut self) {
        self.k.swap(0, 6);
    }
}

fn scaled_rms(v: &[f64], y0: &[f64], y1: &[f64], tol: Tolerances) -> f64 {
    let n = v.len() as f64;
    let sum: f64 = v
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = tol.abs + tol.rel * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

/// Initial step size following Hairer, Norsett & Wanner (HNW I, II.4).
fn initial_step<S: OdeSystem + ?Sized>(
    system: &S,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    span: f64,
    tol: Tolerances,
) -> f64 {
    let d0 = scaled_rms(y0, y0, y0, tol);
    let d1 = scaled_rms(f0, y0, y0, tol);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);

    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let f1 = system.eval(t0 + h0, &y1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = scaled_rms(&diff, y0, y0, tol) / h0;

    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dmax).powf(1.0 / 5.0)
    };
    (100.0 * h0).min(h1).min(span)
}

fn check_inputs<S: OdeSystem + ?Sized>(system: &S, t0: f64, t1: f64, y0: &[f64]) -> Result<()> {
    if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
        return Err(Error::invalid(format!("integration span [{t0}, {t1}] is empty or invalid")));
    }
    if y0.len() != system.dimension() {
        return Err(Error::invalid(format!(
            "initial state has dimension {}, system expects {}",
            y0.len(),
            system.dimension()
        )));
    }
    if !y0.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("initial state is not finite"));
    }
    Ok(())
}

/// Adaptive integration from `t0` to `t1`, returning every accepted step
/// (both endpoints included).
pub fn integrate<S: OdeSystem + ?Sized>(
    system: &S,
    t0: f64,
    t1: f64,
    y0: &[f64],
    tol: Tolerances,
) -> Result<Trajectory> {
    check_inputs(system, t0, t1, y0)?;
    tol.validate()?;

    let n = y0.len();
    let mut stepper = Stepper::new(system);
    system.rhs(t0, y0, &mut stepper.k[0]);

    let mut times = vec![t0];
    let mut states = vec![y0.to_vec()];
    let mut derivatives = vec![stepper.k[0].clone()];

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut h = initial_step(system, t0, y0, &stepper.k[0], t1 - t0, tol);
    let mut err_prev: f64 = 1e-4;
    let mut rejected = false;

    while t < t1 {
        if h < 16.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(Error::Integration {
                last_time: t,
                reason: format!("step size {h:e} underflow"),
            });
        }
        // land exactly on t1 rather than leaving a sliver
        let last = t + 1.01 * h >= t1;
        let h_try = if last { t1 - t } else { h };

        stepper.step(t, &y, h_try, &mut y_new, &mut err);
        let finite = y_new.iter().chain(&stepper.k[6]).all(|v| v.is_finite());
        let err_norm = if finite {
            scaled_rms(&err, &y, &y_new, tol)
        } else {
            f64::INFINITY
        };

        if err_norm <= 1.0 {
            let scale = if err_norm == 0.0 {
                MAX_SCALE
            } else {
                (SAFETY * err_norm.powf(-PI_ALPHA) * err_prev.powf(PI_BETA))
                    .clamp(MIN_SCALE, MAX_SCALE)
            };
            let scale = if rejected { scale.min(1.0) } else { scale };
            err_prev = err_norm.max(1e-4);
            rejected = false;

            t = if last { t1 } else { t + h_try };
            std::mem::swap(&mut y, &mut y_new);
            stepper.advance();
            times.push(t);
            states.push(y.clone());
            derivatives.push(stepper.k[0].clone());
            h = h_try * scale;
        } else {
            let scale = if err_norm.is_finite() {
                (SAFETY * err_norm.powf(-0.2)).max(MIN_SCALE)
            } else {
                MIN_SCALE
            };
            rejected = true;
            h = h_try * scale;
        }
    }

    Ok(Trajectory::from_parts_unchecked(times, states, derivatives))
}

/// Fixed-step Dormand-Prince integration with `steps` equal steps (no error control).
pub fn integrate_fixed<S: OdeSystem + ?Sized>(
    system: &S,
    t0: f64,
    t1: f64,
    y0: &[f64],
    steps: usize,
) -> Result<Trajectory> {
    check_inputs(system, t0, t1, y0)?;
    if steps == 0 {
        return Err(Error::invalid("fixed-step integration needs at least one step"));
    }
    let n = y0.len();
    let h = (t1 - t0) / steps as f64;
    let mut stepper = Stepper::new(system);
    system.rhs(t0, y0, &mut stepper.k[0]);

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut derivatives = Vec::with_capacity(steps + 1);
    times.push(t0);
    states.push(y0.to_vec());
    derivatives.push(stepper.k[0].clone());

    let mut y = y0.to_vec();
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        stepper.step(t, &y, h, &mut y_new, &mut err);
        if !y_new.iter().all(|v| v.is_finite()) {
            return Err(Error::Integration {
                last_time: t,
                reason: "state became non-finite".into(),
            });
        }
        std::mem::swap(&mut y, &mut y_new);
        stepper.advance();
        times.push(if i + 1 == steps { t1 } else { t0 + (i + 1) as f64 * h });
        states.push(y.clone());
        derivatives.push(stepper.k[0].clone());
    }
    Ok(Trajectory::from_parts_unchecked(times, states, derivatives))
}
