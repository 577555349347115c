//! Scheduling policies as a speed rule composed with a job-selection rule.
//!
//! A policy maps the state visible to the scheduler to a [`Decision`]: the
//! processor speed and an allocation of that speed over active jobs. The
//! engine only re-queries at events, so every rule here must be a function
//! of the active-set composition, or report a decision horizon.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::power::PowerFunction;
use crate::workload::JobId;

/// Tie tolerance used to group equal elapsed-work values under SETF.
pub const SETF_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveJob {
    pub id: JobId,
    pub release: f64,
    /// Work processed on this job so far by this schedule.
    pub elapsed: f64,
    /// Remaining work; `None` unless the scheduler is clairvoyant.
    pub remaining: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisibleState {
    pub now: f64,
    /// Sorted by `(release, id)`.
    pub active: Vec<ActiveJob>,
    pub clairvoyant: bool,
}

impl VisibleState {
    pub fn n(&self) -> usize {
        self.active.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub speed: f64,
    /// Fraction of the speed given to each job, sorted by id.
    pub allocation: Vec<(JobId, f64)>,
}

impl Decision {
    pub fn idle() -> Self {
        Self {
            speed: 0.0,
            allocation: Vec::new(),
        }
    }

    /// Equal split of `speed` over `ids`.
    pub fn equal_split(speed: f64, mut ids: Vec<JobId>) -> Self {
        ids.sort();
        let share = if ids.is_empty() { 0.0 } else { 1.0 / ids.len() as f64 };
        Self {
            speed,
            allocation: ids.into_iter().map(|id| (id, share)).collect(),
        }
    }

    pub fn share(&self, id: JobId) -> f64 {
        self.allocation
            .iter()
            .find(|(j, _)| *j == id)
            .map_or(0.0, |(_, f)| *f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SpeedRule {
    /// `(1 + delta) * n^(1/alpha)`.
    Laps { delta: f64, alpha: f64 },
    /// Run at the speed whose power equals `n + offset`.
    PowerEqualsJobs { power: PowerFunction, offset: u32 },
    Fixed { speed: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SelectionRule {
    /// The `ceil(beta * n)` latest-released active jobs.
    Laps { beta: f64 },
    RoundRobin,
    Setf,
    Srpt,
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidParameter(format!("LAPS delta must be in (0, 1], got {delta}")));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidParameter(format!("LAPS beta must be in (0, 1], got {beta}")));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must be > 1, got {alpha}")));
    }
    Ok(())
}

pub fn speed_laps(delta: f64, alpha: f64, n: usize) -> Result<f64> {
    check_delta(delta)?;
    check_alpha(alpha)?;
    if n == 0 {
        return Ok(0.0);
    }
    Ok((1.0 + delta) * (n as f64).powf(1.0 / alpha))
}

pub fn speed_power_equals_jobs(power: &PowerFunction, offset: u32, n: usize) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    power.inverse(n as f64 + offset as f64)
}

/// `ceil(beta * n)`, guarded against products like `(1/6) * 6` landing a
/// hair above an integer.
pub fn laps_count(beta: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let x = beta * n as f64;
    ((x - 1e-9 * x.max(1.0)).ceil() as usize).clamp(1, n)
}

pub fn select_laps(beta: f64, state: &VisibleState) -> Result<Vec<JobId>> {
    check_beta(beta)?;
    let k = laps_count(beta, state.n());
    let mut latest: Vec<&ActiveJob> = state.active.iter().collect();
    latest.sort_by(|a, b| a.release.total_cmp(&b.release).then(a.id.cmp(&b.id)));
    Ok(latest[latest.len() - k..].iter().map(|j| j.id).collect())
}

pub fn select_rr(state: &VisibleState) -> Vec<JobId> {
    state.active.iter().map(|j| j.id).collect()
}

pub fn select_setf(state: &VisibleState) -> Vec<JobId> {
    let Some(min) = state.active.iter().map(|j| j.elapsed).min_by(f64::total_cmp) else {
        return Vec::new();
    };
    let tol = SETF_TIE_TOL * min.max(1.0);
    state
        .active
        .iter()
        .filter(|j| j.elapsed - min <= tol)
        .map(|j| j.id)
        .collect()
}

pub fn select_srpt(state: &VisibleState) -> Result<Vec<JobId>> {
    let mut best: Option<(f64, JobId)> = None;
    for j in &state.active {
        let r = j.remaining.ok_or_else(|| {
            Error::ClairvoyanceRequired(format!("SRPT needs the remaining work of {}", j.id))
        })?;
        if best.is_none_or(|(br, bid)| r < br || (r == br && j.id < bid)) {
            best = Some((r, j.id));
        }
    }
    Ok(best.map(|(_, id)| vec![id]).unwrap_or_default())
}

/// Anything that can drive the engine: produces a decision at every event.
pub trait Scheduler {
    fn name(&self) -> &str;

    fn requires_clairvoyance(&self) -> bool;

    fn decide(&self, state: &VisibleState) -> Result<Decision>;

    /// Rejects power functions the scheduler cannot run under.
    fn check_power(&self, _power: &PowerFunction) -> Result<()> {
        Ok(())
    }

    /// Time after which `decision` may change even without an arrival,
    /// completion, or watch crossing.
    fn decision_horizon(&self, _state: &VisibleState, _decision: &Decision) -> Option<f64> {
        None
    }

    fn as_policy(&self) -> Option<&Policy> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    name: String,
    speed: SpeedRule,
    selection: SelectionRule,
}

pub fn compose(speed: SpeedRule, selection: SelectionRule, name: impl Into<String>) -> Result<Policy> {
    match speed {
        SpeedRule::Laps { delta, alpha } => {
            check_delta(delta)?;
            check_alpha(alpha)?;
        }
        SpeedRule::Fixed { speed } => {
            if !(speed.is_finite() && speed > 0.0) {
                return Err(Error::InvalidParameter(format!("fixed speed must be > 0, got {speed}")));
            }
        }
        SpeedRule::PowerEqualsJobs { offset, .. } => {
            if offset > 1 {
                return Err(Error::InvalidParameter(format!("power offset must be 0 or 1, got {offset}")));
            }
        }
    }
    if let SelectionRule::Laps { beta } = selection {
        check_beta(beta)?;
    }
    Ok(Policy {
        name: name.into(),
        speed,
        selection,
    })
}

impl Policy {
    pub fn laps(delta: f64, beta: f64, alpha: f64) -> Result<Self> {
        compose(
            SpeedRule::Laps { delta, alpha },
            SelectionRule::Laps { beta },
            format!("laps(d={delta},b={beta})"),
        )
    }

    /// LAPS with `delta = 3/alpha` and `beta = 1/(2 alpha)`, the setting under
    /// which the potential-function argument goes through. For `alpha < 3`
    /// this puts delta above 1, which is accepted here only.
    pub fn laps_theorem1(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let delta = 3.0 / alpha;
        let beta = 1.0 / (2.0 * alpha);
        check_beta(beta)?;
        Ok(Policy {
            name: format!("laps-theorem1(a={alpha})"),
            speed: SpeedRule::Laps { delta, alpha },
            selection: SelectionRule::Laps { beta },
        })
    }

    pub fn srpt_power_jobs(power: PowerFunction, offset: u32) -> Result<Self> {
        compose(
            SpeedRule::PowerEqualsJobs { power, offset },
            SelectionRule::Srpt,
            format!("srpt+power=n+{offset}"),
        )
    }

    pub fn rr_power_jobs(power: PowerFunction, offset: u32) -> Result<Self> {
        compose(
            SpeedRule::PowerEqualsJobs { power, offset },
            SelectionRule::RoundRobin,
            format!("rr+power=n+{offset}"),
        )
    }

    pub fn rr_fixed(speed: f64) -> Result<Self> {
        compose(SpeedRule::Fixed { speed }, SelectionRule::RoundRobin, format!("rr@{speed}"))
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn speed_rule(&self) -> &SpeedRule {
        &self.speed
    }

    pub fn selection_rule(&self) -> &SelectionRule {
        &self.selection
    }

    /// True when this is LAPS with `delta = 3/alpha`, `beta = 1/(2 alpha)`.
    pub fn is_laps_theorem1(&self, alpha: f64) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
        match (self.speed, self.selection) {
            (SpeedRule::Laps { delta, alpha: a }, SelectionRule::Laps { beta }) => {
                close(a, alpha) && close(delta, 3.0 / alpha) && close(beta, 1.0 / (2.0 * alpha))
            }
            _ => false,
        }
    }

    fn speed_for(&self, n: usize) -> Result<f64> {
        match self.speed {
            SpeedRule::Laps { delta, alpha } => {
                // Accept any delta > 0 so the theorem-1 setting works for alpha < 3.
                if n == 0 {
                    Ok(0.0)
                } else {
                    Ok((1.0 + delta) * (n as f64).powf(1.0 / alpha))
                }
            }
            SpeedRule::PowerEqualsJobs { power, offset } => speed_power_equals_jobs(&power, offset, n),
            SpeedRule::Fixed { speed } => Ok(if n == 0 { 0.0 } else { speed }),
        }
    }

    fn select(&self, state: &VisibleState) -> Result<Vec<JobId>> {
        match self.selection {
            SelectionRule::Laps { beta } => select_laps(beta, state),
            SelectionRule::RoundRobin => Ok(select_rr(state)),
            SelectionRule::Setf => Ok(select_setf(state)),
            SelectionRule::Srpt => select_srpt(state),
        }
    }
}

impl Scheduler for Policy {
    fn name(&self) -> &str {
        &self.name
    }

    fn requires_clairvoyance(&self) -> bool {
        matches!(self.selection, SelectionRule::Srpt)
    }

    fn decide(&self, state: &VisibleState) -> Result<Decision> {
        if state.active.is_empty() {
            return Ok(Decision::idle());
        }
        let speed = self.speed_for(state.n())?;
        let selected = self.select(state)?;
        Ok(Decision::equal_split(speed, selected))
    }

    fn check_power(&self, power: &PowerFunction) -> Result<()> {
        if let SpeedRule::Laps { .. } = self.speed {
            if power.alpha().is_none() {
                return Err(Error::Config(format!(
                    "{}: the LAPS speed rule is defined only for polynomial power functions, not {power}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Under SETF the least-served group catches up with the next elapsed
    /// level at a computable time; every other rule is event-driven only.
    fn decision_horizon(&self, state: &VisibleState, decision: &Decision) -> Option<f64> {
        if !matches!(self.selection, SelectionRule::Setf) || decision.speed <= 0.0 {
            return None;
        }
        let group = decision.allocation.len();
        let min = state.active.iter().map(|j| j.elapsed).min_by(f64::total_cmp)?;
        let tol = SETF_TIE_TOL * min.max(1.0);
        let next = state
            .active
            .iter()
            .map(|j| j.elapsed)
            .filter(|&e| e - min > tol)
            .min_by(f64::total_cmp)?;
        Some((next - min) * group as f64 / decision.speed)
    }

    fn as_policy(&self) -> Option<&Policy> {
        Some(self)
    }
}
