use serde::Serialize;

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::power::PowerFunction;
use crate::workload::JobId;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalJob {
    pub id: JobId,
    pub release: f64,
    /// Fraction of the interval's speed given to this job.
    pub share: f64,
    /// Work processed on the job at the start of the interval.
    pub processed: f64,
}

/// A maximal stretch of time with constant speed, allocation, and active set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub speed: f64,
    /// Active jobs sorted by `(release, id)`, including those with zero share.
    pub jobs: Vec<IntervalJob>,
    pub energy_rate: f64,
    /// Accumulated `integral n(t) dt` at `start`.
    pub flow_before: f64,
    /// Accumulated energy at `start`.
    pub energy_before: f64,
}

impl Interval {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn n(&self) -> usize {
        self.jobs.len()
    }

    pub fn job(&self, id: JobId) -> Option<&IntervalJob> {
        self.jobs.iter().find(|j| j.id == id)
    }

    /// Processing rate of a job over this interval, zero if not allocated.
    pub fn rate(&self, id: JobId) -> f64 {
        self.job(id).map_or(0.0, |j| j.share * self.speed)
    }

    fn processed_at(&self, j: &IntervalJob, t: f64) -> f64 {
        j.processed + j.share * self.speed * (t - self.start)
    }

    fn flow_at(&self, t: f64) -> f64 {
        self.flow_before + self.n() as f64 * (t - self.start)
    }

    fn energy_at(&self, t: f64) -> f64 {
        self.energy_before + self.energy_rate * (t - self.start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    Completion,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub jobs: Vec<JobId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobRecord {
    pub id: JobId,
    pub release: f64,
    /// Final size; `None` only for open jobs of a truncated run.
    pub size: Option<f64>,
    pub completion: Option<f64>,
}

impl JobRecord {
    pub fn flow(&self) -> Option<f64> {
        self.completion.map(|c| c - self.release)
    }
}

/// Flow time plus energy of a schedule, possibly up to a cut-off time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostSummary {
    /// Sum of per-job flow times.
    pub total_flow: f64,
    /// `integral n(t) dt`, the second route to the same quantity.
    pub flow_integral: f64,
    pub total_energy: f64,
    pub total: f64,
    pub per_job: Vec<(JobId, f64)>,
}

#[derive(Serialize)]
struct CostJson {
    flow: f64,
    energy: f64,
    total: f64,
}

impl CostSummary {
    pub fn zero() -> Self {
        Self {
            total_flow: 0.0,
            flow_integral: 0.0,
            total_energy: 0.0,
            total: 0.0,
            per_job: Vec::new(),
        }
    }

    /// `{"flow":…,"energy":…,"total":…}`
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&CostJson {
            flow: self.total_flow,
            energy: self.total_energy,
            total: self.total,
        })?)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::json!({ "flow": self.total_flow, "energy": self.total_energy, "total": self.total })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobSnapshot {
    pub id: JobId,
    pub release: f64,
    pub size: Option<f64>,
    pub processed: f64,
    pub released: bool,
    pub completed: bool,
}

impl JobSnapshot {
    pub fn is_active(&self) -> bool {
        self.released && !self.completed
    }

    /// Remaining work; zero once completed, `None` for an unrevealed size.
    pub fn remaining(&self) -> Option<f64> {
        if self.completed {
            return Some(0.0);
        }
        self.size.map(|s| (s - self.processed).max(0.0))
    }
}

/// State of a schedule at one instant. Lists every job of the trace,
/// sorted by `(release, id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub jobs: Vec<JobSnapshot>,
    pub flow: f64,
    pub energy: f64,
}

impl Snapshot {
    pub fn active(&self) -> impl Iterator<Item = &JobSnapshot> {
        self.jobs.iter().filter(|j| j.is_active())
    }

    pub fn job(&self, id: JobId) -> Option<&JobSnapshot> {
        self.jobs.iter().find(|j| j.id == id)
    }

    pub fn cost(&self) -> f64 {
        self.flow + self.energy
    }
}

/// Exact piecewise-constant record of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub power: PowerFunction,
    pub scheduler: String,
    /// The policy that produced the trace, when it was a [`Policy`].
    pub policy: Option<Policy>,
    pub intervals: Vec<Interval>,
    pub events: Vec<Event>,
    /// Sorted by `(release, id)`.
    pub jobs: Vec<JobRecord>,
    pub end: f64,
    /// The run stopped at `Options::max_time` with work outstanding.
    pub truncated: bool,
}

#[derive(Serialize)]
struct CsvRow {
    t_start: f64,
    t_end: f64,
    n_active: usize,
    speed: f64,
    energy_rate: f64,
}

/// Left or right limit at an event time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Before,
    After,
}

impl Trace {
    pub fn job(&self, id: JobId) -> Option<&JobRecord> {
        self.jobs.iter().find(|j| j.id == id)
    }

    pub fn completed_all(&self) -> bool {
        self.jobs.iter().all(|j| j.completion.is_some())
    }

    /// Costs accumulated up to `up_to` (clamped to the trace end), or the
    /// whole run for `None`.
    pub fn cost(&self, up_to: Option<f64>) -> CostSummary {
        let cut = up_to.map_or(self.end, |t| t.min(self.end));
        let mut per_job = Vec::with_capacity(self.jobs.len());
        for j in &self.jobs {
            let f = match j.completion {
                Some(c) if c <= cut => c - j.release,
                _ if j.release <= cut => cut - j.release,
                _ => 0.0,
            };
            per_job.push((j.id, f));
        }
        let total_flow: f64 = per_job.iter().map(|(_, f)| f).sum();
        let (mut flow_integral, mut total_energy) = (0.0, 0.0);
        for iv in &self.intervals {
            if iv.start >= cut {
                break;
            }
            let len = iv.end.min(cut) - iv.start;
            flow_integral += iv.n() as f64 * len;
            total_energy += iv.energy_rate * len;
        }
        CostSummary {
            total_flow,
            flow_integral,
            total_energy,
            total: total_flow + total_energy,
            per_job,
        }
    }

    /// Accumulated flow integral and energy at `t`, from the closed-form
    /// per-interval accumulators.
    pub fn accumulated(&self, t: f64) -> (f64, f64) {
        match self.interval_index(t, Side::After) {
            Some(i) => {
                let iv = &self.intervals[i];
                (iv.flow_at(t), iv.energy_at(t))
            }
            None => match self.intervals.last() {
                Some(iv) if t >= iv.end => (iv.flow_at(iv.end), iv.energy_at(iv.end)),
                _ => (0.0, 0.0),
            },
        }
    }

    fn interval_index(&self, t: f64, side: Side) -> Option<usize> {
        let k = match side {
            Side::After => self.intervals.partition_point(|iv| iv.start <= t),
            Side::Before => self.intervals.partition_point(|iv| iv.start < t),
        };
        let i = k.checked_sub(1)?;
        let iv = &self.intervals[i];
        let inside = match side {
            Side::After => t < iv.end,
            Side::Before => t <= iv.end,
        };
        inside.then_some(i)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.end) {
            return Err(Error::Domain(format!(
                "time {t} outside trace span [0, {}]",
                self.end
            )));
        }
        Ok(())
    }

    /// State right after all events at `t` have been processed.
    pub fn state_at(&self, t: f64) -> Result<Snapshot> {
        self.check_time(t)?;
        Ok(self.snapshot(t, Side::After))
    }

    /// Left limit of the state at `t`: processed work is continuous, but
    /// jobs arriving at `t` are not yet released and jobs completing at `t`
    /// are still active.
    pub fn state_before(&self, t: f64) -> Result<Snapshot> {
        self.check_time(t)?;
        Ok(self.snapshot(t, Side::Before))
    }

    fn snapshot(&self, t: f64, side: Side) -> Snapshot {
        let interval = self.interval_index(t, side).map(|i| &self.intervals[i]);
        let jobs = self
            .jobs
            .iter()
            .map(|rec| {
                if let Some(ij) = interval.and_then(|iv| iv.job(rec.id)) {
                    let iv = interval.unwrap();
                    let mut processed = iv.processed_at(ij, t);
                    if let Some(s) = rec.size {
                        processed = processed.min(s);
                    }
                    return JobSnapshot {
                        id: rec.id,
                        release: rec.release,
                        size: rec.size,
                        processed,
                        released: true,
                        completed: false,
                    };
                }
                let (released, completed) = match side {
                    Side::After => (rec.release <= t, rec.completion.is_some_and(|c| c <= t)),
                    Side::Before => (rec.release < t, rec.completion.is_some_and(|c| c < t)),
                };
                let processed = if completed {
                    rec.size.unwrap_or(0.0)
                } else if released {
                    // only reachable at the end of a truncated run
                    self.final_processed(rec.id)
                } else {
                    0.0
                };
                JobSnapshot {
                    id: rec.id,
                    release: rec.release,
                    size: rec.size,
                    processed,
                    released,
                    completed,
                }
            })
            .collect();
        let (flow, energy) = match side {
            Side::After => self.accumulated(t),
            Side::Before => match interval {
                Some(iv) => (iv.flow_at(t), iv.energy_at(t)),
                None => (0.0, 0.0),
            },
        };
        Snapshot {
            time: t,
            jobs,
            flow,
            energy,
        }
    }

    fn final_processed(&self, id: JobId) -> f64 {
        self.intervals
            .iter()
            .rev()
            .find_map(|iv| iv.job(id).map(|j| iv.processed_at(j, iv.end)))
            .unwrap_or(0.0)
    }

    /// Work processed on `id` by time `t`, for any `t >= 0`.
    pub fn processed_at(&self, id: JobId, t: f64) -> f64 {
        let t = t.min(self.end);
        self.snapshot(t, Side::After)
            .job(id)
            .map_or(0.0, |j| j.processed)
    }

    /// Integral of a job's processing rate over the whole trace.
    pub fn work_done(&self, id: JobId) -> f64 {
        self.intervals.iter().map(|iv| iv.rate(id) * iv.len()).sum()
    }

    /// Checks tiling, work conservation, and the flow identity. Returns a
    /// description of each violation; empty means the trace is consistent.
    pub fn check_invariants(&self) -> Vec<String> {
        const REL: f64 = 1e-9;
        let mut out = Vec::new();
        if let Some(first) = self.intervals.first() {
            if first.start != 0.0 {
                out.push(format!("first interval starts at {} instead of 0", first.start));
            }
        }
        for w in self.intervals.windows(2) {
            if w[0].end != w[1].start {
                out.push(format!("gap or overlap between {} and {}", w[0].end, w[1].start));
            }
        }
        for iv in &self.intervals {
            if !(iv.end > iv.start) {
                out.push(format!("empty interval [{}, {})", iv.start, iv.end));
            }
        }
        let last_end = self.intervals.last().map_or(0.0, |iv| iv.end);
        if last_end != self.end {
            out.push(format!("intervals end at {last_end}, trace at {}", self.end));
        }

        let mut rates: std::collections::HashMap<JobId, f64> = std::collections::HashMap::new();
        for iv in &self.intervals {
            for j in &iv.jobs {
                *rates.entry(j.id).or_default() += j.share * iv.speed * iv.len();
            }
        }
        for rec in &self.jobs {
            if let (Some(size), Some(_)) = (rec.size, rec.completion) {
                let done = rates.get(&rec.id).copied().unwrap_or(0.0);
                if (done - size).abs() > REL * size {
                    out.push(format!("{}: processed {done} but size {size}", rec.id));
                }
            }
        }

        let c = self.cost(None);
        let scale = c.total_flow.abs().max(c.flow_integral.abs()).max(f64::MIN_POSITIVE);
        if (c.total_flow - c.flow_integral).abs() > REL * scale {
            out.push(format!(
                "flow identity broken: sum of flows {} vs integral {}",
                c.total_flow, c.flow_integral
            ));
        }
        out
    }

    /// One row per interval: `t_start,t_end,n_active,speed,energy_rate`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for iv in &self.intervals {
            w.serialize(CsvRow {
                t_start: iv.start,
                t_end: iv.end,
                n_active: iv.n(),
                speed: iv.speed,
                energy_rate: iv.energy_rate,
            })?;
        }
        if self.intervals.is_empty() {
            w.write_record(["t_start", "t_end", "n_active", "speed", "energy_rate"])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn events_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.events)?)
    }
}
