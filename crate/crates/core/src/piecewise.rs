//! Piecewise assimilation along an ODE trajectory.
//!
//! The model is integrated from one measurement instant to the next. At each
//! instant the measured components are fused with the forecast through the scalar
//! Kalman gain, and the fused state becomes the initial condition of the next
//! segment. Unmeasured components pass through untouched.

use crate::error::{Error, Result};
use crate::fusion::{fuse_via_gain, kalman_gain};
use crate::integrator::{integrate, OdeSystem, Tolerances, Trajectory};

/// One observed component at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub component: usize,
    pub value: f64,
    pub variance: f64,
}

/// Sparse observations, grouped by strictly increasing time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasurementSeries {
    times: Vec<f64>,
    observations: Vec<Vec<Observation>>,
}

impl MeasurementSeries {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the observations taken at `time`. Components must be distinct;
    /// they are stored in ascending component order.
    pub fn push(&mut self, time: f64, mut observations: Vec<Observation>) -> Result<()> {
        if !time.is_finite() {
            return Err(Error::invalid(format!("measurement time {time} is not finite")));
        }
        if let Some(&last) = self.times.last() {
            if time <= last {
                return Err(Error::invalid(format!(
                    "measurement time {time} does not follow {last}"
                )));
            }
        }
        if observations.is_empty() {
            return Err(Error::invalid(format!("no observations at t = {time}")));
        }
        for o in &observations {
            if !o.value.is_finite() {
                return Err(Error::invalid(format!("observation value {} at t = {time}", o.value)));
            }
            if !(o.variance.is_finite() && o.variance >= 0.0) {
                return Err(Error::invalid(format!(
                    "observation variance {} at t = {time} must be non-negative",
                    o.variance
                )));
            }
        }
        observations.sort_by_key(|o| o.component);
        if observations.windows(2).any(|w| w[0].component == w[1].component) {
            return Err(Error::invalid(format!("component observed twice at t = {time}")));
        }
        self.times.push(time);
        self.observations.push(observations);
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &[Observation])> {
        self.times
            .iter()
            .copied()
            .zip(self.observations.iter().map(Vec::as_slice))
    }

    /// Total number of (time, component) entries.
    pub fn entry_count(&self) -> usize {
        self.observations.iter().map(Vec::len).sum()
    }

    fn check_components(&self, dimension: usize) -> Result<()> {
        for (t, obs) in self.iter() {
            if let Some(o) = obs.iter().find(|o| o.component >= dimension) {
                return Err(Error::invalid(format!(
                    "component {} observed at t = {t} but state dimension is {dimension}",
                    o.component
                )));
            }
        }
        Ok(())
    }
}

/// Forecast variance assumed for the model at an assimilation instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelVariancePolicy {
    Constant(f64),
    /// `v0 + rate * (time since previous assimilation)`; the clock restarts at
    /// every assimilation instant and at `t_start`.
    LinearGrowth { v0: f64, rate: f64 },
}

impl Default for ModelVariancePolicy {
    fn default() -> Self {
        ModelVariancePolicy::Constant(4.0)
    }
}

impl ModelVariancePolicy {
    pub fn variance_after(&self, elapsed: f64) -> f64 {
        match *self {
            ModelVariancePolicy::Constant(v) => v,
            ModelVariancePolicy::LinearGrowth { v0, rate } => v0 + rate * elapsed,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        let valid = match *self {
            ModelVariancePolicy::Constant(v) => ok(v),
            ModelVariancePolicy::LinearGrowth { v0, rate } => ok(v0) && ok(rate),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::invalid(format!("model variance policy {self:?} has negative parameters")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiecewiseDaConfig {
    pub t_start: f64,
    pub t_end: f64,
    pub model_variance: ModelVariancePolicy,
    pub output_step: f64,
    pub tolerances: Tolerances,
}

impl Default for PiecewiseDaConfig {
    fn default() -> Self {
        Self {
            t_start: 0.0,
            t_end: 20.0,
            model_variance: ModelVariancePolicy::default(),
            output_step: 0.01,
            tolerances: Tolerances::default(),
        }
    }
}

impl PiecewiseDaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_start.is_finite() && self.t_end.is_finite() && self.t_end > self.t_start) {
            return Err(Error::invalid(format!(
                "t_end ({}) must exceed t_start ({})",
                self.t_end, self.t_start
            )));
        }
        if !(self.output_step > 0.0 && self.output_step.is_finite()) {
            return Err(Error::invalid(format!(
                "output_step {} must be positive",
                self.output_step
            )));
        }
        self.model_variance.validate()
    }

    /// Uniform output grid `t_start + i * output_step`, closed at `t_end`.
    pub fn output_grid(&self) -> Vec<f64> {
        output_grid(self.t_start, self.t_end, self.output_step)
    }
}

pub(crate) fn output_grid(t_start: f64, t_end: f64, step: f64) -> Vec<f64> {
    let span = t_end - t_start;
    let eps = 1e-9 * step;
    let n = ((span + eps) / step).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|i| t_start + i as f64 * step).collect();
    let last = grid.len() - 1;
    if (grid[last] - t_end).abs() <= eps {
        grid[last] = t_end;
    } else if grid[last] < t_end {
        grid.push(t_end);
    } else {
        grid[last] = t_end;
    }
    grid
}

/// A single fusion of one component at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssimilationEvent {
    pub time: f64,
    pub component: usize,
    pub model_value: f64,
    pub obs_value: f64,
    pub fused_value: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaTrajectory {
    /// Output samples; at an assimilation instant the sample holds the fused state.
    pub trajectory: Trajectory,
    pub events: Vec<AssimilationEvent>,
}

fn check_initial<S: OdeSystem + ?Sized>(system: &S, y0: &[f64]) -> Result<()> {
    if y0.len() != system.dimension() {
        return Err(Error::invalid(format!(
            "initial state has dimension {}, system expects {}",
            y0.len(),
            system.dimension()
        )));
    }
    Ok(())
}

/// Model-only integration over the configured span, sampled on the output grid.
pub fn free_run<S: OdeSystem + ?Sized>(
    system: &S,
    y0: &[f64],
    config: &PiecewiseDaConfig,
) -> Result<Trajectory> {
    config.validate()?;
    check_initial(system, y0)?;
    let dense = integrate(system, config.t_start, config.t_end, y0, config.tolerances)?;
    dense.resample(&config.output_grid())
}

/// Merges measurement instants into the output grid. Grid points within rounding
/// distance of a measurement time are replaced by it.
fn merged_output_times(grid: &[f64], meas_times: &[f64], step: f64) -> Vec<f64> {
    let eps = 1e-9 * step;
    let mut out = Vec::with_capacity(grid.len() + meas_times.len());
    let mut m = meas_times.iter().copied().peekable();
    for &g in grid {
        while let Some(&t) = m.peek() {
            if t < g - eps {
                out.push(t);
                m.next();
            } else {
                break;
            }
        }
        match m.peek() {
            Some(&t) if (t - g).abs() <= eps => {
                out.push(t);
                m.next();
            }
            _ => out.push(g),
        }
    }
    out.extend(m);
    out
}

/// Runs the integrate / fuse / re-initialize loop across all measurement instants.
pub fn run_piecewise_da<S: OdeSystem + ?Sized>(
    system: &S,
    y0: &[f64],
    meas: &MeasurementSeries,
    config: &PiecewiseDaConfig,
) -> Result<DaTrajectory> {
    config.validate()?;
    check_initial(system, y0)?;
    meas.check_components(system.dimension())?;
    if let Some(&t) = meas
        .times()
        .iter()
        .find(|&&t| !(t > config.t_start && t <= config.t_end))
    {
        return Err(Error::invalid(format!(
            "measurement time {t} outside ({}, {}]",
            config.t_start, config.t_end
        )));
    }

    let out_times = merged_output_times(&config.output_grid(), meas.times(), config.output_step);
    let mut times = Vec::with_capacity(out_times.len());
    let mut states = Vec::with_capacity(out_times.len());
    let mut derivatives = Vec::with_capacity(out_times.len());
    let mut events = Vec::with_capacity(meas.entry_count());

    let mut seg_start = config.t_start;
    let mut state = y0.to_vec();
    let mut next_out = 0;

    let mut instants = meas.iter().map(|(t, obs)| (t, Some(obs))).collect::<Vec<_>>();
    if instants.last().map(|&(t, _)| t) != Some(config.t_end) {
        instants.push((config.t_end, None));
    }

    for (seg_end, obs) in instants {
        let segment = integrate(system, seg_start, seg_end, &state, config.tolerances).map_err(
            |e| Error::Segment {
                last_time: seg_start,
                last_state: state.clone(),
                source: Box::new(e),
            },
        )?;

        let include_end = obs.is_none();
        let upto = next_out
            + out_times[next_out..]
                .partition_point(|&t| t < seg_end || (include_end && t == seg_end));
        if upto > next_out {
            let (t, s, d) = segment.resample(&out_times[next_out..upto])?.into_parts();
            times.extend(t);
            states.extend(s);
            derivatives.extend(d);
            next_out = upto;
        }

        let Some(obs) = obs else { break };
        let forecast = segment.last_state();
        let model_var = config.model_variance.variance_after(seg_end - seg_start);
        let mut analysis = forecast.to_vec();
        for o in obs {
            let gain = kalman_gain(model_var, o.variance)?;
            let model_value = forecast[o.component];
            let fused_value = fuse_via_gain(model_value, o.value, gain);
            analysis[o.component] = fused_value;
            events.push(AssimilationEvent {
                time: seg_end,
                component: o.component,
                model_value,
                obs_value: o.value,
                fused_value,
                gain,
            });
        }
        state = analysis;
        seg_start = seg_end;

        if seg_end == config.t_end {
            times.push(seg_end);
            derivatives.push(system.eval(seg_end, &state));
            states.push(state.clone());
            next_out += 1;
        }
    }
    debug_assert_eq!(next_out, out_times.len());

    Ok(DaTrajectory {
        trajectory: Trajectory::new(times, states, derivatives)?,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::FnSystem;
    use crate::models::{lorenz_system, LorenzParams};

    fn obs(component: usize, value: f64, variance: f64) -> Observation {
        Observation {
            component,
            value,
            variance,
        }
    }

    fn cfg(t_end: f64, step: f64) -> PiecewiseDaConfig {
        PiecewiseDaConfig {
            t_end,
            output_step: step,
            ..Default::default()
        }
    }

    #[test]
    fn grid_includes_both_ends() {
        assert_eq!(output_grid(0.0, 20.0, 0.01).len(), 2001);
        let g = output_grid(0.0, 1.05, 0.5);
        assert_eq!(g, vec![0.0, 0.5, 1.0, 1.05]);
        assert_eq!(*output_grid(0.0, 0.3, 0.1).last().unwrap(), 0.3);
    }

    #[test]
    fn free_run_lorenz_sample_count() {
        let sys = lorenz_system(LorenzParams::default());
        let tr = free_run(&sys, &[5.0, 5.0, 5.0], &cfg(20.0, 0.01)).unwrap();
        assert_eq!(tr.len(), 2001);
        let max = tr.states().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 60.0);
    }

    #[test]
    fn no_measurements_equals_free_run() {
        let sys = lorenz_system(LorenzParams::default());
        let c = cfg(5.0, 0.05);
        let free = free_run(&sys, &[5.0, 5.0, 5.0], &c).unwrap();
        let da = run_piecewise_da(&sys, &[5.0, 5.0, 5.0], &MeasurementSeries::new(), &c).unwrap();
        assert_eq!(da.trajectory, free);
        assert!(da.events.is_empty());
    }

    #[test]
    fn exact_measurements_are_snapped_to() {
        let sys = lorenz_system(LorenzParams::default());
        let mut m = MeasurementSeries::new();
        m.push(0.5, vec![obs(0, 3.0, 0.0)]).unwrap();
        m.push(1.0, vec![obs(0, -1.0, 0.0), obs(2, 20.0, 0.0)]).unwrap();
        let da = run_piecewise_da(&sys, &[5.0, 5.0, 5.0], &m, &cfg(2.0, 0.1)).unwrap();
        let tr = &da.trajectory;
        assert_eq!(tr.state_at(0.5).unwrap()[0], 3.0);
        assert_eq!(tr.state_at(1.0).unwrap()[0], -1.0);
        assert_eq!(tr.state_at(1.0).unwrap()[2], 20.0);
        assert_eq!(da.events.len(), 3);
        assert!(da.events.iter().all(|e| e.gain == 1.0));
    }

    #[test]
    fn measurement_at_end_time() {
        let sys = FnSystem::new(1, |_t, _y: &[f64], d: &mut [f64]| d[0] = 1.0);
        let mut m = MeasurementSeries::new();
        m.push(1.0, vec![obs(0, 0.0, 1.0)]).unwrap();
        let c = PiecewiseDaConfig {
            model_variance: ModelVariancePolicy::Constant(1.0),
            ..cfg(1.0, 0.25)
        };
        let da = run_piecewise_da(&sys, &[0.0], &m, &c).unwrap();
        assert_eq!(da.trajectory.len(), 5);
        // forecast 1.0, observation 0.0, equal variances
        assert!((da.trajectory.last_state()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn off_grid_measurement_times_are_added() {
        let sys = FnSystem::new(1, |_t, _y: &[f64], d: &mut [f64]| d[0] = 0.0);
        let mut m = MeasurementSeries::new();
        m.push(0.33, vec![obs(0, 1.0, 0.0)]).unwrap();
        let da = run_piecewise_da(&sys, &[0.0], &m, &cfg(1.0, 0.5)).unwrap();
        assert_eq!(da.trajectory.times(), &[0.0, 0.33, 0.5, 1.0]);
        assert_eq!(da.trajectory.component(0), vec![0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn rejects_measurements_outside_span() {
        let sys = lorenz_system(LorenzParams::default());
        let mut m = MeasurementSeries::new();
        m.push(3.0, vec![obs(0, 1.0, 1.0)]).unwrap();
        assert!(run_piecewise_da(&sys, &[1.0; 3], &m, &cfg(2.0, 0.1)).is_err());
        let mut m = MeasurementSeries::new();
        m.push(1.0, vec![obs(5, 1.0, 1.0)]).unwrap();
        assert!(run_piecewise_da(&sys, &[1.0; 3], &m, &cfg(2.0, 0.1)).is_err());
    }

    #[test]
    fn series_rejects_duplicates_and_disorder() {
        let mut m = MeasurementSeries::new();
        m.push(1.0, vec![obs(0, 1.0, 1.0)]).unwrap();
        assert!(m.push(1.0, vec![obs(1, 1.0, 1.0)]).is_err());
        assert!(m.push(0.5, vec![obs(1, 1.0, 1.0)]).is_err());
        assert!(m.push(2.0, vec![obs(1, 1.0, 1.0), obs(1, 2.0, 1.0)]).is_err());
        assert!(m.push(2.0, vec![obs(1, 1.0, -1.0)]).is_err());
    }

    #[test]
    fn linear_growth_policy_raises_gain_with_gap() {
        let sys = FnSystem::new(1, |_t, _y: &[f64], d: &mut [f64]| d[0] = 0.0);
        let mut m = MeasurementSeries::new();
        m.push(1.0, vec![obs(0, 1.0, 1.0)]).unwrap();
        m.push(4.0, vec![obs(0, 1.0, 1.0)]).unwrap();
        let c = PiecewiseDaConfig {
            model_variance: ModelVariancePolicy::LinearGrowth { v0: 0.0, rate: 1.0 },
            ..cfg(5.0, 0.5)
        };
        let da = run_piecewise_da(&sys, &[0.0], &m, &c).unwrap();
        assert!((da.events[0].gain - 0.5).abs() < 1e-15);
        assert!((da.events[1].gain - 0.75).abs() < 1e-15);
    }

    #[test]
    fn segment_failure_reports_last_assimilated_state() {
        let sys = FnSystem::new(1, |_t, y: &[f64], d: &mut [f64]| d[0] = y[0] * y[0]);
        let mut m = MeasurementSeries::new();
        m.push(0.25, vec![obs(0, 1.0, 0.0)]).unwrap();
        let c = PiecewiseDaConfig {
            t_end: 3.0,
            output_step: 0.25,
            ..Default::default()
        };
        match run_piecewise_da(&sys, &[0.5], &m, &c) {
            Err(Error::Segment {
                last_time,
                last_state,
                ..
            }) => {
                assert_eq!(last_time, 0.25);
                assert_eq!(last_state, vec![1.0]);
            }
            other => panic!("expected segment failure, got {other:?}"),
        }
    }
}
