//! Potential-function verifier, reference optima, and ratio reporting.

pub mod oracle;
pub mod potential;
pub mod suite;

use serde::Serialize;

use crate::engine::CostSummary;
use crate::error::{Error, Result};

pub use oracle::{oracle_opt, single_job_opt, OracleGrid, OracleResult, ProfileScheduler, SingleJobOpt};
pub use potential::{
    check_events, check_running, potential, verify, EventJump, PotentialParams, RunningSample, VerifierReport,
};
pub use suite::random_instance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct YoungCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// Young's inequality for `f(x) = x^(alpha-1)`:
/// `g^alpha/alpha + h^(alpha/(alpha-1)) (alpha-1)/alpha >= g h`.
pub fn young_check(alpha: f64, g: f64, h: f64) -> Result<YoungCheck> {
    if !(alpha.is_finite() && alpha > 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must be > 1, got {alpha}")));
    }
    if !(g >= 0.0 && h >= 0.0) {
        return Err(Error::InvalidParameter(format!("g and h must be >= 0, got {g}, {h}")));
    }
    let lhs = g.powf(alpha) / alpha + h.powf(alpha / (alpha - 1.0)) * (alpha - 1.0) / alpha;
    let rhs = g * h;
    Ok(YoungCheck { lhs, rhs, ok: lhs >= rhs - 1e-9 })
}

/// `alg_cost.total / ref_cost`.
pub fn ratio(alg_cost: &CostSummary, ref_cost: f64) -> Result<f64> {
    if !(ref_cost > 0.0) {
        return Err(Error::Domain(format!("reference cost must be > 0, got {ref_cost}")));
    }
    Ok(alg_cost.total / ref_cost)
}
