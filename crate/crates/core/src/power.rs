//! Power functions mapping processor speed to instantaneous power.
//!
//! Two families are supported: the classical polynomial `P(s) = s^alpha`
//! with `alpha > 1` on `[0, inf)`, and the bounded-domain function
//! `P(s) = (4(2 - s))^(-1/4)` on `[0, 2)`, which satisfies `P'(s) = P(s)^5`
//! and blows up as the speed approaches 2.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PowerKind {
    Polynomial { alpha: f64 },
    Pathological,
}

/// A validated power function. Immutable and `Copy`, so it can be shared
/// freely between concurrent simulations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PowerSpec", into = "PowerSpec")]
pub struct PowerFunction {
    kind: PowerKind,
}

/// Wire form: `{"kind":"polynomial","alpha":3.0}` or `{"kind":"pathological"}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PowerSpec {
    Polynomial { alpha: f64 },
    Pathological,
}

impl TryFrom<PowerSpec> for PowerFunction {
    type Error = Error;

    fn try_from(spec: PowerSpec) -> Result<Self> {
        match spec {
            PowerSpec::Polynomial { alpha } => PowerFunction::polynomial(alpha),
            PowerSpec::Pathological => Ok(PowerFunction::pathological()),
        }
    }
}

impl From<PowerFunction> for PowerSpec {
    fn from(p: PowerFunction) -> Self {
        match p.kind {
            PowerKind::Polynomial { alpha } => PowerSpec::Polynomial { alpha },
            PowerKind::Pathological => PowerSpec::Pathological,
        }
    }
}

const PATHOLOGICAL_UPPER: f64 = 2.0;

impl PowerFunction {
    pub fn polynomial(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "polynomial power exponent must be > 1, got {alpha}"
            )));
        }
        Ok(Self {
            kind: PowerKind::Polynomial { alpha },
        })
    }

    pub fn pathological() -> Self {
        Self {
            kind: PowerKind::Pathological,
        }
    }

    pub fn kind(&self) -> PowerKind {
        self.kind
    }

    /// Exponent of a polynomial power function, `None` for the pathological one.
    pub fn alpha(&self) -> Option<f64> {
        match self.kind {
            PowerKind::Polynomial { alpha } => Some(alpha),
            PowerKind::Pathological => None,
        }
    }

    /// Exclusive upper bound of the admissible speed range.
    pub fn domain_upper(&self) -> f64 {
        match self.kind {
            PowerKind::Polynomial { .. } => f64::INFINITY,
            PowerKind::Pathological => PATHOLOGICAL_UPPER,
        }
    }

    fn check_speed(&self, s: f64) -> Result<()> {
        if s.is_nan() || s < 0.0 || s >= self.domain_upper() {
            return Err(Error::Domain(format!(
                "speed {s} outside [0, {}) for {self}",
                self.domain_upper()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, s: f64) -> Result<f64> {
        self.check_speed(s)?;
        Ok(self.eval_unchecked(s))
    }

    fn eval_unchecked(&self, s: f64) -> f64 {
        match self.kind {
            PowerKind::Polynomial { alpha } => s.powf(alpha),
            PowerKind::Pathological => 1.0 / (4.0 * (PATHOLOGICAL_UPPER - s)).sqrt().sqrt(),
        }
    }

    /// `P(s)` for admissible speeds and `+inf` for speeds at or beyond the
    /// domain bound, i.e. the limit of `P` at its blow-up point. Negative
    /// speeds are still an error.
    pub fn eval_extended(&self, s: f64) -> Result<f64> {
        if s.is_nan() || s < 0.0 {
            return Err(Error::Domain(format!("negative speed {s}")));
        }
        if s >= self.domain_upper() {
            return Ok(f64::INFINITY);
        }
        Ok(self.eval_unchecked(s))
    }

    /// Speed at which the processor draws power `y`.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        let floor = self.eval_unchecked(0.0);
        if y.is_nan() || y < floor {
            return Err(Error::Domain(format!(
                "power {y} below P(0) = {floor} for {self}"
            )));
        }
        match self.kind {
            PowerKind::Polynomial { alpha } => {
                if y.is_infinite() {
                    return Err(Error::Domain("infinite power".into()));
                }
                Ok(y.powf(1.0 / alpha))
            }
            PowerKind::Pathological => {
                // y^-4 = 4(2 - s)
                let s = PATHOLOGICAL_UPPER - 0.25 * y.powi(-4);
                if s >= PATHOLOGICAL_UPPER {
                    return Err(Error::Domain(format!(
                        "power {y} maps to a speed not representable below 2"
                    )));
                }
                Ok(s.max(0.0))
            }
        }
    }

    pub fn derivative(&self, s: f64) -> Result<f64> {
        self.check_speed(s)?;
        Ok(match self.kind {
            PowerKind::Polynomial { alpha } => alpha * s.powf(alpha - 1.0),
            PowerKind::Pathological => self.eval_unchecked(s).powi(5),
        })
    }
}

impl fmt::Display for PowerFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PowerKind::Polynomial { alpha } => write!(f, "s^{alpha}"),
            PowerKind::Pathological => write!(f, "(4(2-s))^(-1/4)"),
        }
    }
}
