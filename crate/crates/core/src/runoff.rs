//! SCS curve-number runoff with area-weighted curve numbers, antecedent moisture
//! adjustment, and per-day fusion of modelled and observed runoff.
//!
//! Depths are in millimetres throughout.

use rand_distr::{Bernoulli, Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};
use crate::fusion::{fuse, UncertainScalar};
use crate::twin::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct LandUseParcel {
    pub label: String,
    pub area: f64,
    pub cn: f64,
}

impl LandUseParcel {
    pub fn new(label: impl Into<String>, area: f64, cn: f64) -> Result<Self> {
        let p = Self {
            label: label.into(),
            area,
            cn,
        };
        if !(area > 0.0 && area.is_finite()) {
            return Err(Error::invalid(format!("parcel '{}': area {area} must be positive", p.label)));
        }
        check_cn(cn)?;
        Ok(p)
    }
}

/// Antecedent moisture class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmcClass {
    /// dry
    I,
    /// average
    II,
    /// wet
    III,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AmcMode {
    Fixed(AmcClass),
    /// Picks class I below `dry_below` mm of 5-day antecedent rain, class III
    /// above `wet_above`, class II otherwise.
    Auto { dry_below: f64, wet_above: f64 },
}

impl AmcMode {
    /// Growing-season thresholds.
    pub const AUTO_GROWING_SEASON: AmcMode = AmcMode::Auto {
        dry_below: 35.6,
        wet_above: 53.3,
    };

    pub fn validate(&self) -> Result<()> {
        if let AmcMode::Auto { dry_below, wet_above } = *self {
            if !(dry_below.is_finite() && wet_above.is_finite() && dry_below >= 0.0) {
                return Err(Error::invalid("AMC thresholds must be finite and non-negative"));
            }
            if !(wet_above > dry_below) {
                return Err(Error::invalid(format!(
                    "AMC thresholds must increase (dry {dry_below}, wet {wet_above})"
                )));
            }
        }
        Ok(())
    }

    pub fn class_for(&self, antecedent_5day_rain: f64) -> AmcClass {
        match *self {
            AmcMode::Fixed(c) => c,
            AmcMode::Auto { dry_below, wet_above } => {
                if antecedent_5day_rain < dry_below {
                    AmcClass::I
                } else if antecedent_5day_rain > wet_above {
                    AmcClass::III
                } else {
                    AmcClass::II
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunoffConfig {
    /// Initial abstraction as a fraction of retention, `Ia = ia_ratio * S`.
    pub ia_ratio: f64,
    pub amc: AmcMode,
}

impl Default for RunoffConfig {
    fn default() -> Self {
        Self {
            ia_ratio: 0.2,
            amc: AmcMode::Fixed(AmcClass::II),
        }
    }
}

impl RunoffConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ia_ratio > 0.0 && self.ia_ratio < 1.0) {
            return Err(Error::invalid(format!(
                "ia_ratio {} must lie in (0, 1)",
                self.ia_ratio
            )));
        }
        self.amc.validate()
    }
}

fn check_cn(cn: f64) -> Result<()> {
    if cn > 0.0 && cn <= 100.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("curve number {cn} outside (0, 100]")))
    }
}

/// Area-weighted mean curve number.
pub fn weighted_cn(parcels: &[LandUseParcel]) -> Result<f64> {
    if parcels.is_empty() {
        return Err(Error::invalid("no land-use parcels"));
    }
    let total: f64 = parcels.iter().map(|p| p.area).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("total parcel area must be positive"));
    }
    let weighted: f64 = parcels.iter().map(|p| p.area * p.cn).sum();
    let (lo, hi) = parcels
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.cn), hi.max(p.cn)));
    Ok((weighted / total).clamp(lo, hi))
}

/// Potential maximum retention `S = 25400 / CN - 254` in mm.
pub fn retention(cn: f64) -> Result<f64> {
    check_cn(cn)?;
    Ok(25400.0 / cn - 254.0)
}

/// Runoff depth for rainfall `p` (mm) on a catchment with curve number `cn`.
pub fn runoff_depth(p: f64, cn: f64, cfg: &RunoffConfig) -> Result<f64> {
    if !(p >= 0.0 && p.is_finite()) {
        return Err(Error::invalid(format!("rainfall {p} must be non-negative")));
    }
    let s = retention(cn)?;
    let ia = cfg.ia_ratio * s;
    if p <= ia {
        return Ok(0.0);
    }
    let excess = p - ia;
    Ok(excess * excess / (excess + s))
}

/// Converts an average-condition curve number to the class selected by `cfg.amc`.
pub fn amc_adjust(cn2: f64, antecedent_5day_rain: f64, cfg: &RunoffConfig) -> Result<f64> {
    check_cn(cn2)?;
    cfg.amc.validate()?;
    let cn = match cfg.amc.class_for(antecedent_5day_rain) {
        AmcClass::I => cn2 / (2.281 - 0.01281 * cn2),
        AmcClass::II => cn2,
        AmcClass::III => cn2 / (0.427 + 0.00573 * cn2),
    };
    Ok(cn.clamp(f64::MIN_POSITIVE, 100.0))
}

/// SCS runoff for a daily rainfall record. The antecedent rain for day `i` is the
/// sum over the (up to) five preceding days. Returns `(cn, q)` per day.
pub fn simulate_runoff(rainfall: &[f64], cn2: f64, cfg: &RunoffConfig) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    rainfall
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let antecedent: f64 = rainfall[i.saturating_sub(5)..i].iter().sum();
            let cn = amc_adjust(cn2, antecedent, cfg)?;
            Ok((cn, runoff_depth(p, cn, cfg)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunoffDay {
    pub day: String,
    pub rainfall_p: f64,
    pub model_q: UncertainScalar,
    pub observed_q: UncertainScalar,
    pub fused_q: Option<UncertainScalar>,
}

impl RunoffDay {
    pub fn validate(&self) -> Result<()> {
        if !(self.rainfall_p >= 0.0 && self.rainfall_p.is_finite()) {
            return Err(Error::invalid(format!("day {}: negative rainfall", self.day)));
        }
        for (what, q) in [("model", &self.model_q), ("observed", &self.observed_q)] {
            q.validate()
                .map_err(|e| Error::invalid(format!("day {}: {what} runoff: {e}", self.day)))?;
            if q.value < 0.0 {
                return Err(Error::invalid(format!("day {}: negative {what} runoff", self.day)));
            }
        }
        Ok(())
    }
}

/// Fuses model and observed runoff day by day, preserving order.
pub fn assimilate_runoff(days: &[RunoffDay]) -> Result<Vec<RunoffDay>> {
    days.iter()
        .map(|d| {
            d.validate()?;
            let r = fuse(d.model_q, d.observed_q)?;
            Ok(RunoffDay {
                fused_q: Some(r.fused),
                ..d.clone()
            })
        })
        .collect()
}

/// Seven-class synthetic catchment used by the demo data set.
pub fn demo_parcels() -> Vec<LandUseParcel> {
    [
        ("built_up", 148.0, 92.0),
        ("water_body", 21.0, 98.0),
        ("wetland", 37.0, 85.0),
        ("vegetation", 52.0, 77.0),
        ("agriculture", 44.0, 81.0),
        ("bare_soil", 18.0, 86.0),
        ("low_lying", 26.0, 89.0),
    ]
    .into_iter()
    .map(|(label, area, cn)| LandUseParcel {
        label: label.to_string(),
        area,
        cn,
    })
    .collect()
}

/// Synthetic monsoon-season record. Rainfall is intermittent and exponentially
/// distributed; the model runs SCS on the weighted curve number; the "observed"
/// series comes from a wetter catchment (curve number + 4) plus noise. Each
/// source's standard deviation is `|z| * (1 + 0.2 q)` with `z` standard normal.
pub fn synthetic_days(
    seed: u64,
    n_days: usize,
    parcels: &[LandUseParcel],
    cfg: &RunoffConfig,
) -> Result<Vec<RunoffDay>> {
    let cn2 = weighted_cn(parcels)?;
    let mut rng = rng_for(seed, 0);
    let wet = Bernoulli::new(0.6).expect("valid probability");
    let depth = Exp::new(1.0 / 25.0).expect("valid rate");
    let rainfall: Vec<f64> = (0..n_days)
        .map(|_| {
            let p: f64 = depth.sample(&mut rng);
            if wet.sample(&mut rng) {
                (p * 10.0).round() / 10.0
            } else {
                0.0
            }
        })
        .collect();

    let modelled = simulate_runoff(&rainfall, cn2, cfg)?;
    let actual = simulate_runoff(&rainfall, (cn2 + 4.0).min(100.0), cfg)?;
    let mut noise = rng_for(seed, 1);
    let mut draw = || -> f64 { StandardNormal.sample(&mut noise) };

    let mut days = Vec::with_capacity(n_days);
    for (i, (&p, (&(_, q_model), &(_, q_true)))) in
        rainfall.iter().zip(modelled.iter().zip(&actual)).enumerate()
    {
        let sd_model = draw().abs() * (1.0 + 0.2 * q_model);
        let sd_obs = draw().abs() * (1.0 + 0.2 * q_true);
        let q_obs = (q_true + sd_obs * draw()).max(0.0);
        days.push(RunoffDay {
            day: (i + 1).to_string(),
            rainfall_p: p,
            model_q: UncertainScalar::new(q_model, sd_model * sd_model)?,
            observed_q: UncertainScalar::new(q_obs, sd_obs * sd_obs)?,
            fused_q: None,
        });
    }
    Ok(days)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parcel(area: f64, cn: f64) -> LandUseParcel {
        LandUseParcel::new("p", area, cn).unwrap()
    }

    #[test]
    fn weighted_cn_examples() {
        assert_eq!(weighted_cn(&[parcel(3.0, 75.0)]).unwrap(), 75.0);
        assert_eq!(weighted_cn(&[parcel(2.0, 60.0), parcel(2.0, 80.0)]).unwrap(), 70.0);
        assert_eq!(weighted_cn(&[parcel(1.0, 40.0), parcel(3.0, 80.0)]).unwrap(), 70.0);
        assert!(weighted_cn(&[]).is_err());
    }

    #[test]
    fn parcel_validation() {
        assert!(LandUseParcel::new("x", 0.0, 70.0).is_err());
        assert!(LandUseParcel::new("x", 1.0, 0.0).is_err());
        assert!(LandUseParcel::new("x", 1.0, 100.5).is_err());
    }

    #[test]
    fn retention_examples() {
        assert_eq!(retention(100.0).unwrap(), 0.0);
        assert_eq!(retention(50.0).unwrap(), 254.0);
        assert_eq!(retention(25.0).unwrap(), 762.0);
        assert!(retention(0.0).is_err());
        assert!(retention(101.0).is_err());
    }

    #[test]
    fn runoff_examples() {
        let cfg = RunoffConfig::default();
        let s = retention(70.0).unwrap();
        let ia = 0.2 * s;
        assert_eq!(runoff_depth(ia, 70.0, &cfg).unwrap(), 0.0);
        assert_eq!(runoff_depth(0.5 * ia, 70.0, &cfg).unwrap(), 0.0);
        assert!((runoff_depth(ia + s, 70.0, &cfg).unwrap() - s / 2.0).abs() < 1e-9);
        assert_eq!(runoff_depth(37.5, 100.0, &cfg).unwrap(), 37.5);
        assert!(runoff_depth(-1.0, 70.0, &cfg).is_err());
    }

    #[test]
    fn amc_endpoints_and_identity() {
        let fixed = |c| RunoffConfig {
            amc: AmcMode::Fixed(c),
            ..Default::default()
        };
        assert!((amc_adjust(100.0, 0.0, &fixed(AmcClass::I)).unwrap() - 100.0).abs() < 1e-9);
        assert!((amc_adjust(100.0, 0.0, &fixed(AmcClass::III)).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(amc_adjust(73.0, 80.0, &fixed(AmcClass::II)).unwrap(), 73.0);
    }

    #[test]
    fn amc_auto_selects_class() {
        let cfg = RunoffConfig {
            amc: AmcMode::AUTO_GROWING_SEASON,
            ..Default::default()
        };
        let cn2 = 80.0;
        assert!(amc_adjust(cn2, 10.0, &cfg).unwrap() < cn2);
        assert_eq!(amc_adjust(cn2, 40.0, &cfg).unwrap(), cn2);
        assert!(amc_adjust(cn2, 60.0, &cfg).unwrap() > cn2);
    }

    #[test]
    fn amc_rejects_inverted_thresholds() {
        let cfg = RunoffConfig {
            amc: AmcMode::Auto {
                dry_below: 50.0,
                wet_above: 30.0,
            },
            ..Default::default()
        };
        assert!(amc_adjust(80.0, 40.0, &cfg).is_err());
    }

    #[test]
    fn antecedent_window_is_five_days() {
        let cfg = RunoffConfig {
            amc: AmcMode::AUTO_GROWING_SEASON,
            ..Default::default()
        };
        // 60 mm on day 0 makes days 1..=5 wet; day 6 sees only zeros again
        let rain = [60.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let out = simulate_runoff(&rain, 80.0, &cfg).unwrap();
        assert!(out[0].0 < 80.0);
        assert!(out[1..=5].iter().all(|&(cn, _)| cn > 80.0));
        assert!(out[6].0 < 80.0);
    }

    #[test]
    fn assimilate_examples() {
        let day = |m: f64, mv: f64, o: f64, ov: f64| RunoffDay {
            day: "1".into(),
            rainfall_p: 30.0,
            model_q: UncertainScalar::new(m, mv).unwrap(),
            observed_q: UncertainScalar::new(o, ov).unwrap(),
            fused_q: None,
        };
        let out = assimilate_runoff(&[day(10.0, 2.0, 14.0, 2.0), day(10.0, 2.0, 14.0, 0.0)]).unwrap();
        assert_eq!(out[0].fused_q.unwrap().value, 12.0);
        assert_eq!(out[1].fused_q.unwrap().value, 14.0);
        assert!(out[0].fused_q.unwrap().variance < 2.0);
    }

    #[test]
    fn synthetic_days_are_reproducible_and_valid() {
        let cfg = RunoffConfig::default();
        let a = synthetic_days(7, 62, &demo_parcels(), &cfg).unwrap();
        assert_eq!(a, synthetic_days(7, 62, &demo_parcels(), &cfg).unwrap());
        assert_eq!(a.len(), 62);
        assert!(a.iter().all(|d| d.validate().is_ok()));
        assert!(a.iter().any(|d| d.model_q.value > 0.0));
    }
}
