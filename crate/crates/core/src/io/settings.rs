//! Resolved parameter sets for each scenario, read from config files and
//! written back out as run manifests. A manifest is itself a valid config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fusion::UncertainScalar;
use crate::integrator::{OdeSystem, Tolerances};
use crate::io::config::{ConfigFile, ConfigWriter};
use crate::models::{lorenz_system, LorenzParams, ModelKind};
use crate::piecewise::{ModelVariancePolicy, PiecewiseDaConfig};
use crate::runoff::{AmcClass, AmcMode, RunoffConfig};
use crate::twin::{TwinConfig, TwinExperiment, RNG_ALGORITHM};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.cfg";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Fuse,
    LorenzTwin,
    Sweep,
    Runoff,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Fuse => "fuse",
            Scenario::LorenzTwin => "lorenz-twin",
            Scenario::Sweep => "sweep",
            Scenario::Runoff => "runoff",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Consumes the bookkeeping keys every manifest carries.
pub fn take_manifest_keys(cfg: &mut ConfigFile, scenario: Scenario) -> Result<()> {
    if let Some((name, _)) = cfg.take_str("scenario") {
        if name != scenario.name() {
            return Err(cfg.error(
                "scenario",
                format!("file is for scenario `{name}`, not `{scenario}`"),
            ));
        }
    }
    cfg.take_str("tool_version");
    cfg.take_str("rng");
    Ok(())
}

pub fn manifest_header(scenario: Scenario, seed: u64) -> ConfigWriter {
    let mut w = ConfigWriter::new();
    w.comment("run manifest; pass back with --config to reproduce this run")
        .set("scenario", scenario)
        .set("tool_version", TOOL_VERSION)
        .set("rng", RNG_ALGORITHM)
        .set("seed", seed);
    w
}

/// Resolves `value` against `base` and canonicalizes it when the file exists.
pub fn resolve_path(base: &Path, value: &Path) -> PathBuf {
    let joined = if value.is_absolute() {
        value.to_path_buf()
    } else {
        base.join(value)
    };
    joined.canonicalize().unwrap_or(joined)
}

fn take_path(cfg: &mut ConfigFile, key: &str) -> Option<PathBuf> {
    let base = cfg.base_dir().to_path_buf();
    cfg.take_str(key)
        .map(|(v, _)| resolve_path(&base, Path::new(&v)))
}

/// `value,variance` pair as used by the `fuse` scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueVar(pub UncertainScalar);

impl FromStr for ValueVar {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (v, var) = s
            .split_once(',')
            .ok_or_else(|| format!("expected `value,variance`, got `{s}`"))?;
        let v: f64 = v.trim().parse().map_err(|_| format!("bad value `{v}`"))?;
        let var: f64 = var.trim().parse().map_err(|_| format!("bad variance `{var}`"))?;
        UncertainScalar::new(v, var)
            .map(ValueVar)
            .map_err(|e| e.to_string())
    }
}

impl fmt::Display for ValueVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.0.value, self.0.variance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuseSettings {
    pub model: UncertainScalar,
    pub obs: UncertainScalar,
    pub seed: u64,
}

impl FuseSettings {
    pub fn from_config(cfg: &mut ConfigFile) -> Result<(Option<ValueVar>, Option<ValueVar>, u64)> {
        take_manifest_keys(cfg, Scenario::Fuse)?;
        let model = cfg.take::<ValueVar>("model")?;
        let obs = cfg.take::<ValueVar>("obs")?;
        let seed = cfg.take_or("seed", 0u64)?;
        Ok((model, obs, seed))
    }

    pub fn manifest(&self) -> String {
        let mut w = manifest_header(Scenario::Fuse, self.seed);
        w.set("model", ValueVar(self.model))
            .set("obs", ValueVar(self.obs));
        w.finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinSettings {
    pub model: ModelKind,
    pub lorenz: LorenzParams,
    pub experiment: TwinExperiment,
    /// Measurements read from file instead of synthesized from the truth run.
    pub measurements: Option<PathBuf>,
    pub sweep_count: usize,
}

impl Default for TwinSettings {
    fn default() -> Self {
        Self {
            model: ModelKind::Lorenz63,
            lorenz: LorenzParams::default(),
            experiment: TwinExperiment::default(),
            measurements: None,
            sweep_count: 20,
        }
    }
}

impl TwinSettings {
    pub fn system(&self) -> Box<dyn OdeSystem + Send + Sync> {
        match self.model {
            ModelKind::Lorenz63 => Box::new(lorenz_system(self.lorenz)),
        }
    }

    pub fn from_config(cfg: &mut ConfigFile, scenario: Scenario) -> Result<Self> {
        take_manifest_keys(cfg, scenario)?;
        let d = TwinSettings::default();
        let model: ModelKind = cfg.take_or("model", d.model)?;
        let dim = model.dimension();

        let lorenz = LorenzParams {
            a1: cfg.take_or("lorenz.a1", d.lorenz.a1)?,
            a2: cfg.take_or("lorenz.a2", d.lorenz.a2)?,
            a3: cfg.take_or("lorenz.a3", d.lorenz.a3)?,
        };

        let dt = &d.experiment.twin;
        let ic_truth = cfg.take_list::<f64>("ic")?.unwrap_or_else(|| dt.ic_truth.clone());
        let ic_noise_std = match cfg.take_list::<f64>("ic_noise_std")? {
            Some(v) if v.len() == 1 => vec![v[0]; dim],
            Some(v) => v,
            None => dt.ic_noise_std.clone(),
        };
        let twin = TwinConfig {
            ic_truth,
            ic_noise_std,
            meas_interval: cfg.take_or("meas_interval", dt.meas_interval)?,
            meas_noise_var: cfg.take_or("meas_noise_var", dt.meas_noise_var)?,
            measured_components: cfg
                .take_list::<usize>("measured_components")?
                .unwrap_or_else(|| dt.measured_components.clone()),
            seed: cfg.take_or("seed", dt.seed)?,
        };

        let dd = &d.experiment.da;
        let default_v = constant_value(dd.model_variance);
        let policy = match cfg.take_str("model_variance.policy") {
            None => ModelVariancePolicy::Constant(cfg.take_or("model_variance.value", default_v)?),
            Some((p, _)) => match p.as_str() {
                "constant" => {
                    ModelVariancePolicy::Constant(cfg.take_or("model_variance.value", default_v)?)
                }
                "linear_growth" => ModelVariancePolicy::LinearGrowth {
                    v0: cfg.take_or("model_variance.v0", default_v)?,
                    rate: cfg.take_or("model_variance.rate", 0.0)?,
                },
                other => {
                    return Err(cfg.error(
                        "model_variance.policy",
                        format!("unknown policy `{other}` (expected constant or linear_growth)"),
                    ))
                }
            },
        };
        let da = PiecewiseDaConfig {
            t_start: cfg.take_or("t_start", dd.t_start)?,
            t_end: cfg.take_or("t_end", dd.t_end)?,
            model_variance: policy,
            output_step: cfg.take_or("output_step", dd.output_step)?,
            tolerances: Tolerances {
                rel: cfg.take_or("rel_tol", dd.tolerances.rel)?,
                abs: cfg.take_or("abs_tol", dd.tolerances.abs)?,
            },
        };

        let experiment = TwinExperiment {
            twin,
            da,
            threshold_fraction: cfg.take_or("threshold", d.experiment.threshold_fraction)?,
            error_component: cfg.take_or("error_component", d.experiment.error_component)?,
        };
        let measurements = take_path(cfg, "measurements");
        let sweep_count = cfg.take_or("sweep.count", d.sweep_count)?;

        let settings = Self {
            model,
            lorenz,
            experiment,
            measurements,
            sweep_count,
        };
        settings.validate().map_err(|e| Error::Config {
            path: cfg.path().to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        Ok(settings)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.model.dimension();
        self.experiment.twin.validate(dim)?;
        self.experiment.da.validate()?;
        if self.experiment.error_component >= dim {
            return Err(Error::invalid(format!(
                "error_component {} out of range",
                self.experiment.error_component
            )));
        }
        if !(self.experiment.threshold_fraction > 0.0) {
            return Err(Error::invalid("threshold must be positive"));
        }
        Ok(())
    }

    pub fn manifest(&self, scenario: Scenario) -> String {
        let e = &self.experiment;
        let mut w = manifest_header(scenario, e.twin.seed);
        w.set("model", self.model)
            .set("lorenz.a1", self.lorenz.a1)
            .set("lorenz.a2", self.lorenz.a2)
            .set("lorenz.a3", self.lorenz.a3)
            .set_list("ic", &e.twin.ic_truth)
            .set_list("ic_noise_std", &e.twin.ic_noise_std)
            .set("t_start", e.da.t_start)
            .set("t_end", e.da.t_end)
            .set("output_step", e.da.output_step)
            .set("meas_interval", e.twin.meas_interval)
            .set("meas_noise_var", e.twin.meas_noise_var)
            .set_list("measured_components", &e.twin.measured_components);
        match e.da.model_variance {
            ModelVariancePolicy::Constant(v) => {
                w.set("model_variance.policy", "constant")
                    .set("model_variance.value", v);
            }
            ModelVariancePolicy::LinearGrowth { v0, rate } => {
                w.set("model_variance.policy", "linear_growth")
                    .set("model_variance.v0", v0)
                    .set("model_variance.rate", rate);
            }
        }
        w.set("rel_tol", e.da.tolerances.rel)
            .set("abs_tol", e.da.tolerances.abs)
            .set("threshold", e.threshold_fraction)
            .set("error_component", e.error_component);
        if let Some(p) = &self.measurements {
            w.set("measurements", p.display());
        }
        if scenario == Scenario::Sweep {
            w.set("sweep.count", self.sweep_count);
        }
        w.finish()
    }
}

fn constant_value(p: ModelVariancePolicy) -> f64 {
    match p {
        ModelVariancePolicy::Constant(v) => v,
        ModelVariancePolicy::LinearGrowth { v0, .. } => v0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunoffSettings {
    pub parcels: Option<PathBuf>,
    pub days: Option<PathBuf>,
    /// Generate this many synthetic days instead of reading `days`.
    pub synthetic_days: Option<usize>,
    /// Overrides the parcel-weighted curve number.
    pub cn: Option<f64>,
    pub config: RunoffConfig,
    pub seed: u64,
}

impl Default for RunoffSettings {
    fn default() -> Self {
        Self {
            parcels: None,
            days: None,
            synthetic_days: None,
            cn: None,
            config: RunoffConfig::default(),
            seed: 2007,
        }
    }
}

fn amc_name(mode: AmcMode) -> &'static str {
    match mode {
        AmcMode::Fixed(AmcClass::I) => "I",
        AmcMode::Fixed(AmcClass::II) => "II",
        AmcMode::Fixed(AmcClass::III) => "III",
        AmcMode::Auto { .. } => "auto",
    }
}

impl RunoffSettings {
    pub fn from_config(cfg: &mut ConfigFile) -> Result<Self> {
        take_manifest_keys(cfg, Scenario::Runoff)?;
        let d = RunoffSettings::default();
        let parcels = take_path(cfg, "parcels");
        let days = take_path(cfg, "days");
        let synthetic_days = cfg.take::<usize>("synthetic_days")?;
        let cn = cfg.take::<f64>("cn")?;
        let ia_ratio = cfg.take_or("ia_ratio", d.config.ia_ratio)?;
        let AmcMode::Auto {
            dry_below: dry_default,
            wet_above: wet_default,
        } = AmcMode::AUTO_GROWING_SEASON
        else {
            unreachable!()
        };
        let amc = match cfg.take_str("amc.mode") {
            None => d.config.amc,
            Some((m, _)) => match m.as_str() {
                "I" => AmcMode::Fixed(AmcClass::I),
                "II" => AmcMode::Fixed(AmcClass::II),
                "III" => AmcMode::Fixed(AmcClass::III),
                "auto" => AmcMode::Auto {
                    dry_below: cfg.take_or("amc.dry_below", dry_default)?,
                    wet_above: cfg.take_or("amc.wet_above", wet_default)?,
                },
                other => {
                    return Err(cfg.error(
                        "amc.mode",
                        format!("unknown AMC mode `{other}` (expected I, II, III or auto)"),
                    ))
                }
            },
        };
        let config = RunoffConfig { ia_ratio, amc };
        config.validate().map_err(|e| cfg.error("ia_ratio", e.to_string()))?;
        Ok(Self {
            parcels,
            days,
            synthetic_days,
            cn,
            config,
            seed: cfg.take_or("seed", d.seed)?,
        })
    }

    pub fn manifest(&self) -> String {
        let mut w = manifest_header(Scenario::Runoff, self.seed);
        if let Some(p) = &self.parcels {
            w.set("parcels", p.display());
        }
        if let Some(p) = &self.days {
            w.set("days", p.display());
        }
        if let Some(n) = self.synthetic_days {
            w.set("synthetic_days", n);
        }
        if let Some(cn) = self.cn {
            w.set("cn", cn);
        }
        w.set("ia_ratio", self.config.ia_ratio)
            .set("amc.mode", amc_name(self.config.amc));
        if let AmcMode::Auto { dry_below, wet_above } = self.config.amc {
            w.set("amc.dry_below", dry_below)
                .set("amc.wet_above", wet_above);
        }
        w.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twin_manifest_round_trips() {
        let mut s = TwinSettings::default();
        s.experiment.twin.seed = 99;
        s.experiment.da.model_variance = ModelVariancePolicy::LinearGrowth { v0: 0.5, rate: 2.0 };
        let text = s.manifest(Scenario::Sweep);
        let mut cfg = ConfigFile::parse(Path::new("m.cfg"), &text).unwrap();
        let back = TwinSettings::from_config(&mut cfg, Scenario::Sweep).unwrap();
        cfg.finish().unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn scenario_mismatch_is_rejected() {
        let text = TwinSettings::default().manifest(Scenario::LorenzTwin);
        let mut cfg = ConfigFile::parse(Path::new("m.cfg"), &text).unwrap();
        let err = RunoffSettings::from_config(&mut cfg).unwrap_err();
        assert!(err.to_string().contains("scenario"), "{err}");
    }

    #[test]
    fn scalar_noise_is_broadcast() {
        let mut cfg = ConfigFile::parse(Path::new("c.cfg"), "ic_noise_std = 0.5\n").unwrap();
        let s = TwinSettings::from_config(&mut cfg, Scenario::LorenzTwin).unwrap();
        assert_eq!(s.experiment.twin.ic_noise_std, vec![0.5; 3]);
    }

    #[test]
    fn bad_policy_names_line() {
        let mut cfg = ConfigFile::parse(Path::new("c.cfg"), "t_end = 5\nmodel_variance.policy = magic\n").unwrap();
        let err = TwinSettings::from_config(&mut cfg, Scenario::LorenzTwin).unwrap_err();
        assert!(err.to_string().starts_with("c.cfg:2:"), "{err}");
    }

    #[test]
    fn runoff_manifest_round_trips() {
        let s = RunoffSettings {
            synthetic_days: Some(30),
            cn: Some(83.5),
            config: RunoffConfig {
                ia_ratio: 0.05,
                amc: AmcMode::AUTO_GROWING_SEASON,
            },
            ..Default::default()
        };
        let mut cfg = ConfigFile::parse(Path::new("m.cfg"), &s.manifest()).unwrap();
        let back = RunoffSettings::from_config(&mut cfg).unwrap();
        cfg.finish().unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn value_var_parsing() {
        let v: ValueVar = "10,1".parse().unwrap();
        assert_eq!(v.0, UncertainScalar::new(10.0, 1.0).unwrap());
        assert!("10".parse::<ValueVar>().is_err());
        assert!("10,-1".parse::<ValueVar>().is_err());
    }
}
