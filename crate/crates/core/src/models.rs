//! Concrete vector fields.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::integrator::OdeSystem;

/// Lorenz-63 coefficients: Prandtl-like `a1`, Rayleigh-like `a2`, geometric `a3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorenzParams {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            a1: 10.0,
            a2: 28.0,
            a3: 8.0 / 3.0,
        }
    }
}

pub fn lorenz_rhs(state: &[f64; 3], params: &LorenzParams) -> [f64; 3] {
    let [x, y, z] = *state;
    [
        params.a1 * (y - x),
        params.a2 * x - y - x * z,
        x * y - params.a3 * z,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Lorenz63 {
    pub params: LorenzParams,
}

impl OdeSystem for Lorenz63 {
    fn dimension(&self) -> usize {
        3
    }

    fn rhs(&self, _t: f64, y: &[f64], dydt: &mut [f64]) {
        let d = lorenz_rhs(&[y[0], y[1], y[2]], &self.params);
        dydt.copy_from_slice(&d);
    }
}

pub fn lorenz_system(params: LorenzParams) -> Lorenz63 {
    Lorenz63 { params }
}

/// Systems selectable by name from configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Lorenz63,
}

impl ModelKind {
    pub const ALL: &'static [ModelKind] = &[ModelKind::Lorenz63];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lorenz63 => "lorenz63",
        }
    }

    pub fn dimension(self) -> usize {
        match self {
            ModelKind::Lorenz63 => 3,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = ModelKind::ALL.iter().map(|m| m.name()).collect();
                Error::invalid(format!("unknown model '{s}' (known: {})", known.join(", ")))
            })
    }
}
