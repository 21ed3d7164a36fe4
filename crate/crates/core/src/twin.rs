//! Twin experiments: a reference run plays the role of nature, supplies noisy
//! observations, and makes the estimation error exactly measurable.
//!
//! All randomness comes from ChaCha20 streams keyed by the configured seed; the
//! initial-condition perturbation and the observation noise use separate streams
//! so changing one never shifts the other.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::integrator::{integrate, OdeSystem, Tolerances, Trajectory};
use crate::piecewise::{
    free_run, output_grid, run_piecewise_da, DaTrajectory, MeasurementSeries, Observation,
    PiecewiseDaConfig,
};

/// Algorithm identifier written into run manifests.
pub const RNG_ALGORITHM: &str = "chacha20 (rand_chacha 0.9, seed_from_u64 + set_stream); normals: rand_distr StandardNormal ziggurat";

const IC_STREAM: u64 = 0;
const MEASUREMENT_STREAM: u64 = 1;

/// Tolerances used for reference ("truth") runs.
pub const TRUTH_TOLERANCES: Tolerances = Tolerances {
    rel: 1e-9,
    abs: 1e-12,
};

/// How long an error must stay above threshold to count as divergence, in seconds.
pub const DIVERGENCE_HOLD: f64 = 1.0;

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinConfig {
    pub ic_truth: Vec<f64>,
    pub ic_noise_std: Vec<f64>,
    pub meas_interval: f64,
    pub meas_noise_var: f64,
    pub measured_components: Vec<usize>,
    pub seed: u64,
}

impl Default for TwinConfig {
    fn default() -> Self {
        Self {
            ic_truth: vec![5.0, 5.0, 5.0],
            ic_noise_std: vec![3.5, 3.5, 3.5],
            meas_interval: 0.5,
            meas_noise_var: 0.25,
            measured_components: vec![0],
            seed: 0,
        }
    }
}

impl TwinConfig {
    pub fn validate(&self, dimension: usize) -> Result<()> {
        if self.ic_truth.len() != dimension {
            return Err(Error::invalid(format!(
                "ic_truth has {} components, system has {dimension}",
                self.ic_truth.len()
            )));
        }
        if self.ic_noise_std.len() != dimension {
            return Err(Error::invalid(format!(
                "ic_noise_std has {} components, system has {dimension}",
                self.ic_noise_std.len()
            )));
        }
        if !self.ic_noise_std.iter().all(|s| s.is_finite() && *s >= 0.0) {
            return Err(Error::invalid("ic_noise_std entries must be non-negative"));
        }
        if !(self.meas_interval > 0.0 && self.meas_interval.is_finite()) {
            return Err(Error::invalid(format!(
                "meas_interval {} must be positive",
                self.meas_interval
            )));
        }
        if !(self.meas_noise_var >= 0.0 && self.meas_noise_var.is_finite()) {
            return Err(Error::invalid(format!(
                "meas_noise_var {} must be non-negative",
                self.meas_noise_var
            )));
        }
        if let Some(c) = self.measured_components.iter().find(|&&c| c >= dimension) {
            return Err(Error::invalid(format!(
                "measured component {c} out of range for dimension {dimension}"
            )));
        }
        let mut sorted = self.measured_components.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.measured_components.len() {
            return Err(Error::invalid("measured_components contains duplicates"));
        }
        Ok(())
    }
}

/// Reference run from `ic_truth` at [`TRUTH_TOLERANCES`], sampled every `output_step`.
pub fn generate_truth<S: OdeSystem + ?Sized>(
    system: &S,
    cfg: &TwinConfig,
    span: (f64, f64),
    output_step: f64,
) -> Result<Trajectory> {
    let (t0, t1) = span;
    if !(t0.is_finite() && t1.is_finite() && t1 >= t0) {
        return Err(Error::invalid(format!("invalid span ({t0}, {t1})")));
    }
    if !(output_step > 0.0) {
        return Err(Error::invalid(format!("output_step {output_step} must be positive")));
    }
    if cfg.ic_truth.len() != system.dimension() {
        return Err(Error::invalid("ic_truth dimension does not match system"));
    }
    if t1 == t0 {
        return Trajectory::from_states(system, vec![t0], vec![cfg.ic_truth.clone()]);
    }
    let dense = integrate(system, t0, t1, &cfg.ic_truth, TRUTH_TOLERANCES)?;
    dense.resample(&output_grid(t0, t1, output_step))
}

/// `ic` plus independent zero-mean Gaussian draws with the given standard deviations.
pub fn perturb_ic(ic: &[f64], noise_std: &[f64], seed: u64) -> Vec<f64> {
    assert_eq!(ic.len(), noise_std.len(), "ic and noise_std lengths differ");
    let mut rng = rng_for(seed, IC_STREAM);
    ic.iter()
        .zip(noise_std)
        .map(|(&x, &std)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            x + std * z
        })
        .collect()
}

/// Observations of `measured_components` every `meas_interval` after the start of
/// `truth`, with additive Gaussian noise of variance `meas_noise_var`.
pub fn synthesize_measurements(truth: &Trajectory, cfg: &TwinConfig) -> Result<MeasurementSeries> {
    let (t0, t1) = (truth.start(), truth.end());
    let eps = 1e-9 * cfg.meas_interval;
    let noise_std = cfg.meas_noise_var.sqrt();
    let mut components = cfg.measured_components.clone();
    components.sort_unstable();

    let mut rng = rng_for(cfg.seed, MEASUREMENT_STREAM);
    let mut series = MeasurementSeries::new();
    for k in 1.. {
        let mut t = t0 + k as f64 * cfg.meas_interval;
        if t > t1 + eps {
            break;
        }
        if (t - t1).abs() <= eps {
            t = t1;
        }
        if components.is_empty() {
            continue;
        }
        let state = truth.state_at(t)?;
        let obs = components
            .iter()
            .map(|&c| {
                let z: f64 = StandardNormal.sample(&mut rng);
                Observation {
                    component: c,
                    value: state[c] + noise_std * z,
                    variance: cfg.meas_noise_var,
                }
            })
            .collect();
        series.push(t, obs)?;
    }
    Ok(series)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
}

impl ErrorSeries {
    /// Trapezoidal integral of the error over `[from, to]`, using the samples inside it.
    pub fn integral(&self, from: f64, to: f64) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .times
            .iter()
            .copied()
            .zip(self.errors.iter().copied())
            .filter(|&(t, _)| t >= from && t <= to)
            .collect();
        pts.windows(2)
            .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
            .sum()
    }

    pub fn max(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Pointwise `|truth - run|` of one component on the truth grid (restricted to
/// the span both trajectories cover).
pub fn error_series(truth: &Trajectory, run: &Trajectory, component: usize) -> Result<ErrorSeries> {
    if component >= truth.dimension() || component >= run.dimension() {
        return Err(Error::invalid(format!("component {component} out of range")));
    }
    let (lo, hi) = (run.start(), run.end());
    let mut times = Vec::new();
    let mut errors = Vec::new();
    for (&t, s) in truth.times().iter().zip(truth.states()) {
        if t < lo || t > hi {
            continue;
        }
        let r = run.state_at(t)?;
        times.push(t);
        errors.push((s[component] - r[component]).abs());
    }
    if times.is_empty() {
        return Err(Error::invalid(format!(
            "run span [{lo}, {hi}] does not overlap truth span [{}, {}]",
            truth.start(),
            truth.end()
        )));
    }
    Ok(ErrorSeries { times, errors })
}

/// First time the error exceeds `threshold` and stays above it for [`DIVERGENCE_HOLD`].
pub fn divergence_time(err: &ErrorSeries, threshold: f64) -> Option<f64> {
    divergence_time_with_hold(err, threshold, DIVERGENCE_HOLD)
}

/// Like [`divergence_time`] with an explicit hold. The hold window must be fully
/// covered by samples; an excursion cut off by the end of the record does not count.
pub fn divergence_time_with_hold(err: &ErrorSeries, threshold: f64, hold: f64) -> Option<f64> {
    let slack = 1e-9 * hold.max(1.0);
    let mut onset: Option<f64> = None;
    for (&t, &e) in err.times.iter().zip(&err.errors) {
        if e > threshold {
            let start = *onset.get_or_insert(t);
            if t - start >= hold - slack {
                return Some(start);
            }
        } else {
            onset = None;
        }
    }
    None
}

/// Settings for a complete twin experiment on top of [`TwinConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct TwinExperiment {
    pub twin: TwinConfig,
    pub da: PiecewiseDaConfig,
    /// Divergence threshold as a fraction of the truth's max |component|.
    pub threshold_fraction: f64,
    /// Component whose error is reported.
    pub error_component: usize,
}

impl Default for TwinExperiment {
    fn default() -> Self {
        Self {
            twin: TwinConfig::default(),
            da: PiecewiseDaConfig::default(),
            threshold_fraction: 0.2,
            error_component: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinOutcome {
    pub truth: Trajectory,
    pub noisy_ic: Vec<f64>,
    pub noisy_run: Trajectory,
    pub measurements: MeasurementSeries,
    pub da: DaTrajectory,
    pub err_noisy: ErrorSeries,
    pub err_da: ErrorSeries,
    pub threshold: f64,
    pub divergence_noisy: Option<f64>,
    pub divergence_da: Option<f64>,
}

/// Truth, noisy-IC free run and assimilated run from the same noisy IC, plus
/// their error series and divergence times.
pub fn run_twin_experiment<S: OdeSystem + ?Sized>(
    system: &S,
    exp: &TwinExperiment,
) -> Result<TwinOutcome> {
    run_twin_experiment_with(system, exp, None)
}

/// As [`run_twin_experiment`], but assimilates `measurements` when given instead
/// of synthesizing them from the truth run.
pub fn run_twin_experiment_with<S: OdeSystem + ?Sized>(
    system: &S,
    exp: &TwinExperiment,
    measurements: Option<MeasurementSeries>,
) -> Result<TwinOutcome> {
    exp.twin.validate(system.dimension())?;
    exp.da.validate()?;
    if exp.error_component >= system.dimension() {
        return Err(Error::invalid(format!(
            "error component {} out of range",
            exp.error_component
        )));
    }
    if !(exp.threshold_fraction > 0.0) {
        return Err(Error::invalid("threshold fraction must be positive"));
    }

    let truth = generate_truth(
        system,
        &exp.twin,
        (exp.da.t_start, exp.da.t_end),
        exp.da.output_step,
    )?;
    let noisy_ic = perturb_ic(&exp.twin.ic_truth, &exp.twin.ic_noise_std, exp.twin.seed);
    let noisy_run = free_run(system, &noisy_ic, &exp.da)?;
    let measurements = match measurements {
        Some(m) => m,
        None => synthesize_measurements(&truth, &exp.twin)?,
    };
    let da = run_piecewise_da(system, &noisy_ic, &measurements, &exp.da)?;

    let c = exp.error_component;
    let err_noisy = error_series(&truth, &noisy_run, c)?;
    let err_da = error_series(&truth, &da.trajectory, c)?;
    let amplitude = truth.states().iter().map(|s| s[c].abs()).fold(0.0, f64::max);
    let threshold = exp.threshold_fraction * amplitude;

    Ok(TwinOutcome {
        divergence_noisy: divergence_time(&err_noisy, threshold),
        divergence_da: divergence_time(&err_da, threshold),
        truth,
        noisy_ic,
        noisy_run,
        measurements,
        da,
        err_noisy,
        err_da,
        threshold,
    })
}
