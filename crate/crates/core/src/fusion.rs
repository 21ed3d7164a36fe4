//! Scalar variance-weighted fusion.
//!
//! Two independent, unbiased estimates of one quantity are combined with weights
//! inversely proportional to their variances. The same update written in innovation
//! form uses the Kalman gain `W = var_model / (var_model + var_obs)`:
//!
//! ```text
//! fused = model + W * (obs - model)
//! ```
//!
//! Vector states are fused one component at a time; cross-covariances are not modelled.

use crate::error::{Error, Result};

/// A value paired with its variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertainScalar {
    pub value: f64,
    pub variance: f64,
}

impl UncertainScalar {
    pub fn new(value: f64, variance: f64) -> Result<Self> {
        let s = Self { value, variance };
        s.validate()?;
        Ok(s)
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !self.value.is_finite() {
            return Err(Error::invalid(format!("value {} is not finite", self.value)));
        }
        if !(self.variance.is_finite() && self.variance >= 0.0) {
            return Err(Error::invalid(format!(
                "variance {} must be finite and non-negative",
                self.variance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionResult {
    pub fused: UncertainScalar,
    /// Weight on the model value.
    pub weight_model: f64,
    /// Weight on the observation; equal to `gain`.
    pub weight_obs: f64,
    pub gain: f64,
}

/// Kalman gain for a scalar update: the fraction of the innovation that is kept.
pub fn kalman_gain(var_model: f64, var_obs: f64) -> Result<f64> {
    for (name, v) in [("model", var_model), ("observation", var_obs)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::invalid(format!(
                "{name} variance {v} must be finite and non-negative"
            )));
        }
    }
    let total = var_model + var_obs;
    if total == 0.0 {
        return Err(Error::DegenerateGain);
    }
    Ok(var_model / total)
}

/// Innovation-form update `model + gain * (obs - model)`.
pub fn fuse_via_gain(t_model: f64, t_obs: f64, gain: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&gain), "gain {gain} outside [0, 1]");
    // convex form: gain 1 returns the observation exactly, gain 0 the model
    (1.0 - gain) * t_model + gain * t_obs
}

/// Minimum-variance combination of a model estimate and an observation.
pub fn fuse(model: UncertainScalar, obs: UncertainScalar) -> Result<FusionResult> {
    model.validate()?;
    obs.validate()?;

    let total = model.variance + obs.variance;
    if total == 0.0 {
        if model.value != obs.value {
            return Err(Error::DegenerateFusion {
                model: model.value,
                obs: obs.value,
            });
        }
        return Ok(FusionResult {
            fused: UncertainScalar {
                value: model.value,
                variance: 0.0,
            },
            weight_model: 0.5,
            weight_obs: 0.5,
            gain: 0.5,
        });
    }

    let weight_model = obs.variance / total;
    let weight_obs = model.variance / total;
    let (lo, hi) = if model.value <= obs.value {
        (model.value, obs.value)
    } else {
        (obs.value, model.value)
    };
    // rounding can push a convex combination one ulp past its endpoints
    let value = (weight_model * model.value + weight_obs * obs.value).clamp(lo, hi);
    let variance = model.variance * obs.variance / total;

    Ok(FusionResult {
        fused: UncertainScalar { value, variance },
        weight_model,
        weight_obs,
        gain: weight_obs,
    })
}
