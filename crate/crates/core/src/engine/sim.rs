use std::collections::HashMap;

use crate::engine::trace::{Event, EventKind, Interval, IntervalJob, JobRecord, Trace};
use crate::error::{Error, Result};
use crate::policy::{ActiveJob, Decision, Scheduler, VisibleState};
use crate::power::PowerFunction;
use crate::workload::{
    AdaptiveWorkload, Instance, JobId, JobProgress, JobSize, StaticWorkload, Watch,
    WorkloadView,
};

/// Remaining work below this (absolute) counts as done.
pub const COMPLETION_TOL: f64 = 1e-12;

/// Slack on watch thresholds and allocation sums.
const WATCH_TOL: f64 = 1e-12;
const ALLOCATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Options {
    /// Upper bound on loop iterations (one per event time).
    pub max_events: usize,
    /// Truncate the run here. A run that reaches it with open jobs still
    /// active is reported as a stall.
    pub max_time: f64,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            max_events: 10_000_000,
            max_time: f64::INFINITY,
        }
    }
}

/// One job's situation during a pending interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepJob {
    pub id: JobId,
    pub processed: f64,
    /// `None` for open jobs.
    pub remaining: Option<f64>,
    pub rate: f64,
}

/// Everything that bounds the length of the next interval.
#[derive(Debug, Clone, Copy)]
pub struct StepState<'a> {
    pub jobs: &'a [StepJob],
    /// Time until the next pending release, if any.
    pub next_arrival_in: Option<f64>,
    pub watches: &'a [Watch],
    /// Scheduler-reported time until its decision may change.
    pub horizon: Option<f64>,
}

fn crossing(processed: f64, rate: f64, target: f64) -> Option<f64> {
    (rate > 0.0 && processed < target - WATCH_TOL).then(|| (target - processed) / rate)
}

/// Length of the interval starting now: the earliest of the next arrival,
/// the first completion at current rates, the first watch crossing, and
/// the scheduler horizon. `+inf` when none of these exists.
pub fn next_event(step: &StepState<'_>) -> f64 {
    let mut dt = f64::INFINITY;
    if let Some(a) = step.next_arrival_in {
        dt = dt.min(a);
    }
    if let Some(h) = step.horizon {
        dt = dt.min(h);
    }
    for j in step.jobs {
        if let (Some(rem), true) = (j.remaining, j.rate > 0.0) {
            dt = dt.min(rem.max(0.0) / j.rate);
        }
    }
    for w in step.watches {
        for j in step.jobs {
            let hit = match *w {
                Watch::AnyJobProcessed { work } => crossing(j.processed, j.rate, work),
                Watch::JobProcessed { id, work } if id == j.id => crossing(j.processed, j.rate, work),
                Watch::JobProcessed { .. } => None,
            };
            if let Some(h) = hit {
                dt = dt.min(h);
            }
        }
    }
    dt
}

struct Live {
    id: JobId,
    release: f64,
    size: JobSize,
    processed: f64,
    completion: Option<f64>,
}

impl Live {
    fn remaining(&self) -> Option<f64> {
        self.size.finite().map(|s| s - self.processed)
    }
}

fn watch_hits(w: &Watch, jobs: &[Live], active: &[usize]) -> Vec<JobId> {
    active
        .iter()
        .map(|&i| &jobs[i])
        .filter(|j| match *w {
            Watch::AnyJobProcessed { work } => j.processed >= work - WATCH_TOL,
            Watch::JobProcessed { id, work } => j.id == id && j.processed >= work - WATCH_TOL,
        })
        .map(|j| j.id)
        .collect()
}

/// Runs `scheduler` on a fixed instance.
pub fn simulate(
    instance: &Instance,
    scheduler: &dyn Scheduler,
    power: &PowerFunction,
    opts: &Options,
) -> Result<Trace> {
    simulate_adaptive(&mut StaticWorkload(instance), scheduler, power, opts)
}

/// Runs `scheduler` against a workload that may react at watch crossings.
///
/// Event order at equal timestamps: completions, adaptive directives,
/// arrivals, then a fresh decision.
pub fn simulate_adaptive(
    workload: &mut dyn AdaptiveWorkload,
    scheduler: &dyn Scheduler,
    power: &PowerFunction,
    opts: &Options,
) -> Result<Trace> {
    scheduler.check_power(power)?;
    let initial = Instance::from_jobs(workload.initial_jobs());
    let violations = initial.validate();
    if !violations.is_empty() {
        return Err(Error::InvalidParameter(violations.join("; ")));
    }
    let clairvoyant = scheduler.requires_clairvoyance();
    if clairvoyant && initial.has_open_jobs() {
        return Err(Error::ClairvoyanceRequired(format!(
            "{} needs job sizes but the workload has open jobs",
            scheduler.name()
        )));
    }

    let mut jobs: Vec<Live> = initial
        .jobs()
        .iter()
        .map(|j| Live {
            id: j.id,
            release: j.release,
            size: j.size,
            processed: 0.0,
            completion: None,
        })
        .collect();
    let mut index: HashMap<JobId, usize> = jobs.iter().enumerate().map(|(i, j)| (j.id, i)).collect();
    let mut next_pending = 0usize;
    let mut active: Vec<usize> = Vec::new();

    let mut t = 0.0f64;
    let (mut flow, mut energy) = (0.0f64, 0.0f64);
    let mut intervals: Vec<Interval> = Vec::new();
    let mut events: Vec<Event> = Vec::new();
    let mut iterations = 0usize;
    let mut truncated = false;

    loop {
        iterations += 1;
        if iterations > opts.max_events {
            return Err(Error::EventLimit {
                limit: opts.max_events,
                time: t,
            });
        }

        let mut arrived = Vec::new();
        while next_pending < jobs.len() && jobs[next_pending].release <= t {
            active.push(next_pending);
            arrived.push(jobs[next_pending].id);
            next_pending += 1;
        }
        if !arrived.is_empty() {
            events.push(Event {
                time: t,
                kind: EventKind::Arrival,
                jobs: arrived,
            });
        }

        if active.is_empty() && next_pending == jobs.len() {
            break;
        }
        if t >= opts.max_time {
            let open: Vec<&Live> = active.iter().map(|&i| &jobs[i]).filter(|j| j.size.is_open()).collect();
            if !open.is_empty() {
                let most = open.iter().map(|j| j.processed).fold(0.0, f64::max);
                return Err(Error::Stall {
                    time: t,
                    reason: format!(
                        "max_time reached with {} open job(s) active; most processed work {most}, watches {:?}",
                        open.len(),
                        workload.watches()
                    ),
                });
            }
            truncated = true;
            break;
        }

        let (decision, horizon) = if active.is_empty() {
            (Decision::idle(), None)
        } else {
            let state = VisibleState {
                now: t,
                active: active
                    .iter()
                    .map(|&i| {
                        let j = &jobs[i];
                        ActiveJob {
                            id: j.id,
                            release: j.release,
                            elapsed: j.processed,
                            remaining: if clairvoyant { j.remaining() } else { None },
                        }
                    })
                    .collect(),
                clairvoyant,
            };
            let d = scheduler.decide(&state)?;
            validate_decision(&d, &state, t)?;
            let horizon = scheduler.decision_horizon(&state, &d);
            (d, horizon)
        };

        let energy_rate = if active.is_empty() {
            0.0
        } else {
            power.eval(decision.speed).map_err(|e| match e {
                Error::Domain(m) => Error::Domain(format!("{} at t={t}: {m}", scheduler.name())),
                other => other,
            })?
        };
        let shares: HashMap<JobId, f64> = decision.allocation.iter().copied().collect();
        let step_jobs: Vec<StepJob> = active
            .iter()
            .map(|&i| {
                let j = &jobs[i];
                StepJob {
                    id: j.id,
                    processed: j.processed,
                    remaining: j.remaining(),
                    rate: decision.speed * shares.get(&j.id).copied().unwrap_or(0.0),
                }
            })
            .collect();
        let watches = workload.watches();
        let satisfied_before: Vec<bool> =
            watches.iter().map(|w| !watch_hits(w, &jobs, &active).is_empty()).collect();
        let dt = next_event(&StepState {
            jobs: &step_jobs,
            next_arrival_in: (next_pending < jobs.len()).then(|| jobs[next_pending].release - t),
            watches: &watches,
            horizon,
        })
        .min(opts.max_time - t);

        if !dt.is_finite() {
            let ids: Vec<String> = active.iter().map(|&i| jobs[i].id.to_string()).collect();
            return Err(Error::Stall {
                time: t,
                reason: format!(
                    "no pending arrival, completable work, or reachable watch (speed {}, active [{}])",
                    decision.speed,
                    ids.join(", ")
                ),
            });
        }

        let t_next = t + dt;
        if t_next > t {
            intervals.push(Interval {
                start: t,
                end: t_next,
                speed: decision.speed,
                jobs: step_jobs
                    .iter()
                    .map(|s| IntervalJob {
                        id: s.id,
                        release: jobs[index[&s.id]].release,
                        share: shares.get(&s.id).copied().unwrap_or(0.0),
                        processed: s.processed,
                    })
                    .collect(),
                energy_rate,
                flow_before: flow,
                energy_before: energy,
            });
            for s in &step_jobs {
                jobs[index[&s.id]].processed += s.rate * dt;
            }
            flow += active.len() as f64 * dt;
            energy += energy_rate * dt;
            t = t_next;
        } else {
            // dt vanished against t's precision: apply the binding event directly.
            for s in &step_jobs {
                let j = &mut jobs[index[&s.id]];
                if let (Some(rem), true) = (s.remaining, s.rate > 0.0) {
                    if rem / s.rate <= dt {
                        j.processed = j.size.finite().unwrap_or(j.processed);
                    }
                }
                for w in &watches {
                    let target = match *w {
                        Watch::AnyJobProcessed { work } => Some(work),
                        Watch::JobProcessed { id, work } if id == s.id => Some(work),
                        _ => None,
                    };
                    if let Some(work) = target {
                        if crossing(s.processed, s.rate, work).is_some_and(|h| h <= dt) {
                            j.processed = work;
                        }
                    }
                }
            }
        }

        complete_finished(&mut jobs, &mut active, &mut events, t);

        for (w, was) in watches.iter().zip(satisfied_before) {
            if was {
                continue;
            }
            let hits = watch_hits(w, &jobs, &active);
            let Some(&trigger) = hits.iter().min() else { continue };
            let progress: Vec<JobProgress> = jobs[..next_pending]
                .iter()
                .map(|j| JobProgress {
                    id: j.id,
                    release: j.release,
                    size: j.size,
                    processed: j.processed,
                    completed: j.completion.is_some(),
                })
                .collect();
            let view = WorkloadView {
                now: t,
                jobs: &progress,
                flow,
                energy,
                fired: *w,
                trigger,
            };
            let directives = workload.on_event(&view)?;
            events.push(Event {
                time: t,
                kind: EventKind::Adaptive,
                jobs: vec![trigger],
            });
            for (id, size) in directives.finalize {
                let &i = index.get(&id).ok_or(Error::UnknownJob(id))?;
                let j = &mut jobs[i];
                if !j.size.is_open() {
                    return Err(Error::Directive {
                        time: t,
                        reason: format!("{id} is not open; sizes are final once revealed"),
                    });
                }
                if !(size.is_finite() && size > 0.0 && size >= j.processed - COMPLETION_TOL) {
                    return Err(Error::Directive {
                        time: t,
                        reason: format!("{id}: size {size} below processed work {}", j.processed),
                    });
                }
                j.size = JobSize::Finite(size);
            }
            for (release, size) in directives.release {
                let latest = jobs.last().map_or(0.0, |j| j.release);
                if !(release.is_finite() && release >= t && release >= latest) {
                    return Err(Error::Directive {
                        time: t,
                        reason: format!("release at {release} is in the past or before a known release ({latest})"),
                    });
                }
                if let JobSize::Finite(w) = size {
                    if !(w.is_finite() && w > 0.0) {
                        return Err(Error::Directive {
                            time: t,
                            reason: format!("released job size {w} must be > 0"),
                        });
                    }
                } else if clairvoyant {
                    return Err(Error::ClairvoyanceRequired(format!(
                        "{} cannot schedule an open job",
                        scheduler.name()
                    )));
                }
                let id = JobId(jobs.iter().map(|j| j.id.0).max().unwrap_or(0) + 1);
                index.insert(id, jobs.len());
                jobs.push(Live {
                    id,
                    release,
                    size,
                    processed: 0.0,
                    completion: None,
                });
            }
            complete_finished(&mut jobs, &mut active, &mut events, t);
        }
    }

    Ok(Trace {
        power: *power,
        scheduler: scheduler.name().to_string(),
        policy: scheduler.as_policy().cloned(),
        intervals,
        events,
        jobs: jobs
            .iter()
            .map(|j| JobRecord {
                id: j.id,
                release: j.release,
                size: j.size.finite(),
                completion: j.completion,
            })
            .collect(),
        end: t,
        truncated,
    })
}

fn complete_finished(jobs: &mut [Live], active: &mut Vec<usize>, events: &mut Vec<Event>, t: f64) {
    let mut done = Vec::new();
    active.retain(|&i| {
        let j = &mut jobs[i];
        match j.remaining() {
            Some(rem) if rem <= COMPLETION_TOL => {
                j.processed = j.size.finite().unwrap_or(j.processed);
                j.completion = Some(t);
                done.push(j.id);
                false
            }
            _ => true,
        }
    });
    if !done.is_empty() {
        events.push(Event {
            time: t,
            kind: EventKind::Completion,
            jobs: done,
        });
    }
}

fn validate_decision(d: &Decision, state: &VisibleState, t: f64) -> Result<()> {
    let bad = |reason: String| Err(Error::InvalidDecision { time: t, reason });
    if !(d.speed.is_finite() && d.speed >= 0.0) {
        return bad(format!("speed {} must be finite and >= 0", d.speed));
    }
    let mut sum = 0.0;
    for (id, f) in &d.allocation {
        if !state.active.iter().any(|j| j.id == *id) {
            return bad(format!("allocation to inactive job {id}"));
        }
        if !(*f >= 0.0 && *f <= 1.0 + ALLOCATION_TOL) {
            return bad(format!("fraction {f} for {id} outside [0, 1]"));
        }
        sum += f;
    }
    if d.speed > 0.0 && (sum - 1.0).abs() > ALLOCATION_TOL {
        return bad(format!("allocation sums to {sum}, expected 1"));
    }
    Ok(())
}
