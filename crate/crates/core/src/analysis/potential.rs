//! Potential function and local-competitiveness checks for LAPS.
//!
//! With `q_a`, `q_o` the remaining work of a job under the algorithm and a
//! reference schedule, and `j_1..j_m` the algorithm's active jobs in
//! `(release, id)` order,
//!
//! ```text
//! Phi(t) = gamma * sum_i i^(1 - 1/alpha) * max(0, q_a(j_i, t) - q_o(j_i, t))
//! ```
//!
//! The verifier checks that `Phi` starts and ends at zero, never jumps up at
//! an arrival or completion, and that between events
//! `dG_a/dt + dPhi/dt <= c * dG_o/dt`, where `G = flow + energy`.

use serde::Serialize;

use crate::engine::{EventKind, Interval, Snapshot, Trace};
use crate::error::{Error, Result};
use crate::workload::JobId;

/// Relative slack on event jumps.
pub const EVENT_TOL: f64 = 1e-7;
/// Relative slack on the running condition.
pub const RUNNING_TOL: f64 = 1e-6;
/// A lag this small (relative to the job size) counts as zero when taking
/// the right derivative of `max(0, .)`.
const KINK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PotentialParams {
    pub alpha: f64,
    pub gamma: f64,
    pub c: f64,
}

impl PotentialParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must be > 1, got {alpha}")));
        }
        let b = 1.0 + (1.0 + 3.0 / alpha).powf(alpha);
        Ok(Self {
            alpha,
            gamma: alpha * b,
            c: 4.0 * alpha.powi(3) * b,
        })
    }

    fn weight(&self, rank: usize) -> f64 {
        (rank as f64).powf(1.0 - 1.0 / self.alpha)
    }
}

fn universe_check(a: &Snapshot, o: &Snapshot) -> Result<()> {
    let ids = |s: &Snapshot| {
        let mut v: Vec<JobId> = s.jobs.iter().map(|j| j.id).collect();
        v.sort();
        v
    };
    let (ia, io) = (ids(a), ids(o));
    if ia != io {
        let stray = ia
            .iter()
            .find(|id| !io.contains(id))
            .or_else(|| io.iter().find(|id| !ia.contains(id)))
            .copied();
        return Err(Error::Input(format!(
            "snapshots describe different instances (e.g. {})",
            stray.map_or_else(|| "job count".to_string(), |id| id.to_string())
        )));
    }
    Ok(())
}

/// `Phi` for two snapshots taken at the same time.
pub fn potential(state_a: &Snapshot, state_o: &Snapshot, params: &PotentialParams) -> Result<f64> {
    universe_check(state_a, state_o)?;
    let mut active: Vec<_> = state_a.active().collect();
    active.sort_by(|x, y| x.release.total_cmp(&y.release).then(x.id.cmp(&y.id)));
    let mut sum = 0.0;
    for (i, ja) in active.iter().enumerate() {
        let qa = ja
            .remaining()
            .ok_or_else(|| Error::Input(format!("{} has no revealed size", ja.id)))?;
        let jo = state_o.job(ja.id).expect("universe checked");
        let qo = if jo.released { jo.remaining().unwrap_or(0.0) } else { 0.0 };
        sum += params.weight(i + 1) * (qa - qo).max(0.0);
    }
    Ok(params.gamma * sum)
}

/// State at `t`, treating times past the end of a completed trace as the
/// final state.
fn state(trace: &Trace, t: f64, before: bool) -> Result<Snapshot> {
    if t > trace.end {
        let mut s = trace.state_at(trace.end)?;
        s.time = t;
        return Ok(s);
    }
    if before {
        trace.state_before(t)
    } else {
        trace.state_at(t)
    }
}

fn phi_at(a: &Trace, o: &Trace, t: f64, before: bool, params: &PotentialParams) -> Result<(f64, Snapshot, Snapshot)> {
    let sa = state(a, t, before)?;
    let so = state(o, t, before)?;
    Ok((potential(&sa, &so, params)?, sa, so))
}

fn same_instance(a: &Trace, o: &Trace) -> Result<()> {
    if a.jobs.len() != o.jobs.len() {
        return Err(Error::Input(format!(
            "traces hold {} and {} jobs",
            a.jobs.len(),
            o.jobs.len()
        )));
    }
    for (x, y) in a.jobs.iter().zip(&o.jobs) {
        if x.id != y.id || x.release != y.release || x.size != y.size {
            return Err(Error::Input(format!("job {} differs between the traces", x.id)));
        }
        if x.size.is_none() {
            return Err(Error::Input(format!("job {} has no revealed size", x.id)));
        }
    }
    Ok(())
}

/// Jump of `Phi` across one event time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventJump {
    pub time: f64,
    /// E.g. `["arrival", "completion:alg"]`.
    pub kinds: Vec<String>,
    pub phi_before: f64,
    pub phi_after: f64,
    pub delta: f64,
    pub ok: bool,
}

/// `Phi` across every arrival and every completion of either schedule.
pub fn check_events(trace_a: &Trace, trace_o: &Trace, params: &PotentialParams) -> Result<Vec<EventJump>> {
    same_instance(trace_a, trace_o)?;
    let mut times: Vec<(f64, String)> = Vec::new();
    for (tr, who) in [(trace_a, "alg"), (trace_o, "opt")] {
        for e in &tr.events {
            let kind = match e.kind {
                EventKind::Arrival if who == "alg" => "arrival".to_string(),
                EventKind::Arrival => continue,
                EventKind::Completion => format!("completion:{who}"),
                EventKind::Adaptive => format!("adaptive:{who}"),
            };
            times.push((e.time, kind));
        }
    }
    times.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(&y.1)));
    let mut out: Vec<EventJump> = Vec::new();
    for (t, kind) in times {
        if let Some(last) = out.last_mut() {
            if last.time == t {
                if !last.kinds.contains(&kind) {
                    last.kinds.push(kind);
                }
                continue;
            }
        }
        let (before, _, _) = phi_at(trace_a, trace_o, t, true, params)?;
        let (after, _, _) = phi_at(trace_a, trace_o, t, false, params)?;
        let delta = after - before;
        out.push(EventJump {
            time: t,
            kinds: vec![kind],
            phi_before: before,
            phi_after: after,
            delta,
            ok: delta <= EVENT_TOL * before.max(1.0),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunningSample {
    pub time: f64,
    pub n_a: usize,
    pub n_o: usize,
    pub phi: f64,
    pub dphi: f64,
    /// `n_a + P(s_a) + dPhi/dt`.
    pub lhs: f64,
    /// `c (n_o + P(s_o))`.
    pub rhs: f64,
    /// `rhs - lhs`.
    pub slack: f64,
    pub ok: bool,
}

/// Rates of one schedule over a stretch where it is constant.
struct Piece<'a> {
    iv: Option<&'a Interval>,
}

impl Piece<'_> {
    fn n(&self) -> usize {
        self.iv.map_or(0, |iv| iv.n())
    }

    fn energy_rate(&self) -> f64 {
        self.iv.map_or(0.0, |iv| iv.energy_rate)
    }

    /// `(processed, rate)` of a job active in this piece at time `t`.
    fn progress(&self, id: JobId, t: f64) -> Option<(f64, f64)> {
        let iv = self.iv?;
        let j = iv.job(id)?;
        let rate = j.share * iv.speed;
        Some((j.processed + rate * (t - iv.start), rate))
    }
}

/// Walks a trace's intervals in time order.
struct Cursor<'a> {
    trace: &'a Trace,
    next: usize,
}

impl<'a> Cursor<'a> {
    fn new(trace: &'a Trace) -> Self {
        Self { trace, next: 0 }
    }

    /// The interval covering `[lo, hi]`, or an idle piece.
    fn piece(&mut self, lo: f64) -> Piece<'a> {
        let ivs = &self.trace.intervals;
        while self.next < ivs.len() && ivs[self.next].end <= lo {
            self.next += 1;
        }
        Piece { iv: ivs.get(self.next).filter(|iv| iv.start <= lo) }
    }
}

fn merged_grid(a: &Trace, o: &Trace) -> Vec<f64> {
    let mut t: Vec<f64> = a
        .intervals
        .iter()
        .chain(&o.intervals)
        .flat_map(|iv| [iv.start, iv.end])
        .collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

fn check_theorem1(trace_a: &Trace, params: &PotentialParams) -> Result<()> {
    let ok = trace_a.policy.as_ref().is_some_and(|p| p.is_laps_theorem1(params.alpha))
        && trace_a.power.alpha() == Some(params.alpha);
    if !ok {
        return Err(Error::ParameterMismatch(format!(
            "the running condition is stated for LAPS(3/alpha, 1/(2 alpha)) under s^{}; got {} under {}",
            params.alpha, trace_a.scheduler, trace_a.power
        )));
    }
    Ok(())
}

/// Samples the running condition on every stretch where both schedules
/// are constant: both endpoints plus `interior` evenly spaced points.
/// `dPhi/dt` is the exact right derivative.
pub fn check_running(
    trace_a: &Trace,
    trace_o: &Trace,
    params: &PotentialParams,
    interior: usize,
) -> Result<Vec<RunningSample>> {
    check_theorem1(trace_a, params)?;
    same_instance(trace_a, trace_o)?;
    let sizes: std::collections::HashMap<JobId, f64> =
        trace_a.jobs.iter().map(|j| (j.id, j.size.unwrap_or(0.0))).collect();
    let grid = merged_grid(trace_a, trace_o);
    let (mut ca, mut co) = (Cursor::new(trace_a), Cursor::new(trace_o));
    let mut out = Vec::new();
    for w in grid.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let (pa, po) = (ca.piece(lo), co.piece(lo));
        let dga = pa.n() as f64 + pa.energy_rate();
        let rhs = params.c * (po.n() as f64 + po.energy_rate());
        let Some(iv) = pa.iv else {
            // no active jobs: Phi is identically zero
            for m in 0..interior + 2 {
                let t = lo + (hi - lo) * m as f64 / (interior + 1) as f64;
                out.push(sample(t, 0, po.n(), 0.0, 0.0, dga, rhs));
            }
            continue;
        };
        for m in 0..interior + 2 {
            let t = lo + (hi - lo) * m as f64 / (interior + 1) as f64;
            let (mut phi, mut dphi) = (0.0, 0.0);
            for (i, j) in iv.jobs.iter().enumerate() {
                let size = sizes[&j.id];
                let (pa_done, ra) = pa.progress(j.id, t).expect("job of this interval");
                let (qo, ro) = match po.progress(j.id, t) {
                    Some((done, r)) => (size - done, r),
                    None => (0.0, 0.0),
                };
                let lag = (size - pa_done) - qo;
                let slope = ro - ra;
                let w = params.weight(i + 1);
                if lag > KINK_TOL * size.max(1.0) {
                    phi += w * lag;
                    dphi += w * slope;
                } else if lag >= -KINK_TOL * size.max(1.0) {
                    dphi += w * slope.max(0.0);
                }
            }
            out.push(sample(t, iv.n(), po.n(), params.gamma * phi, params.gamma * dphi, dga, rhs));
        }
    }
    Ok(out)
}

fn sample(time: f64, n_a: usize, n_o: usize, phi: f64, dphi: f64, dga: f64, rhs: f64) -> RunningSample {
    let lhs = dga + dphi;
    RunningSample {
        time,
        n_a,
        n_o,
        phi,
        dphi,
        lhs,
        rhs,
        slack: rhs - lhs,
        ok: lhs <= rhs + RUNNING_TOL * rhs.max(1.0),
    }
}

/// Full state of both schedules at a failing check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureDump {
    pub time: f64,
    pub check: String,
    pub alg: Vec<JobDump>,
    pub opt: Vec<JobDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobDump {
    pub id: JobId,
    pub release: f64,
    pub size: Option<f64>,
    pub processed: f64,
    pub active: bool,
}

fn dump(s: &Snapshot) -> Vec<JobDump> {
    s.jobs
        .iter()
        .map(|j| JobDump {
            id: j.id,
            release: j.release,
            size: j.size,
            processed: j.processed,
            active: j.is_active(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifierReport {
    pub params: PotentialParams,
    pub phi_start: f64,
    pub phi_end: f64,
    pub boundary_ok: bool,
    pub event_jumps: Vec<EventJump>,
    pub running_samples: Vec<RunningSample>,
    /// Largest of every `delta` and every `lhs - rhs`, without tolerances.
    pub max_violation: f64,
    pub alg_cost: f64,
    pub ref_cost: f64,
    /// `alg_cost <= c * ref_cost`.
    pub end_to_end_ok: bool,
    pub failures: Vec<FailureDump>,
}

impl VerifierReport {
    pub fn passed(&self) -> bool {
        self.boundary_ok
            && self.end_to_end_ok
            && self.event_jumps.iter().all(|e| e.ok)
            && self.running_samples.iter().all(|s| s.ok)
    }

    pub fn events_ok(&self) -> bool {
        self.event_jumps.iter().all(|e| e.ok)
    }

    pub fn running_ok(&self) -> bool {
        self.running_samples.iter().all(|s| s.ok)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Runs every check of `trace_a` (LAPS with the Theorem 1 parameters)
/// against the reference schedule `trace_o`.
pub fn verify(trace_a: &Trace, trace_o: &Trace, params: &PotentialParams, interior: usize) -> Result<VerifierReport> {
    if trace_a.truncated || trace_o.truncated || !trace_a.completed_all() || !trace_o.completed_all() {
        return Err(Error::Input("both schedules must complete every job".into()));
    }
    let running_samples = check_running(trace_a, trace_o, params, interior)?;
    let event_jumps = check_events(trace_a, trace_o, params)?;
    let first = trace_a.jobs.iter().map(|j| j.release).fold(f64::INFINITY, f64::min);
    let phi_start = if first.is_finite() { phi_at(trace_a, trace_o, first, true, params)?.0 } else { 0.0 };
    let end = trace_a.end.max(trace_o.end);
    let phi_end = phi_at(trace_a, trace_o, end, false, params)?.0;
    let boundary_ok = phi_start == 0.0 && phi_end == 0.0;

    let mut failures = Vec::new();
    for e in event_jumps.iter().filter(|e| !e.ok) {
        for before in [true, false] {
            let (_, sa, so) = phi_at(trace_a, trace_o, e.time, before, params)?;
            let side = if before { "before" } else { "after" };
            failures.push(FailureDump { time: e.time, check: format!("event {side}"), alg: dump(&sa), opt: dump(&so) });
        }
    }
    for s in running_samples.iter().filter(|s| !s.ok) {
        let (_, sa, so) = phi_at(trace_a, trace_o, s.time, false, params)?;
        failures.push(FailureDump { time: s.time, check: "running".into(), alg: dump(&sa), opt: dump(&so) });
    }
    let max_violation = event_jumps
        .iter()
        .map(|e| e.delta)
        .chain(running_samples.iter().map(|s| -s.slack))
        .fold(f64::NEG_INFINITY, f64::max);
    let alg_cost = trace_a.cost(None).total;
    let ref_cost = trace_o.cost(None).total;
    Ok(VerifierReport {
        params: *params,
        phi_start,
        phi_end,
        boundary_ok,
        event_jumps,
        running_samples,
        max_violation,
        alg_cost,
        ref_cost,
        end_to_end_ok: alg_cost <= params.c * ref_cost * (1.0 + RUNNING_TOL),
        failures,
    })
}
