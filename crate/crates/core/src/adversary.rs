//! Lower-bound constructions against nonclairvoyant schedulers.
//!
//! [`Lemma3Adversary`] releases `n = ceil(k P(v))` jobs of unknown size and
//! waits until the scheduler has pushed one of them through `n` units of
//! work. At that moment `T` it looks at the cost `G(T)` paid so far and
//! either declares every size to be `n` (when `G(T) >= k n^3`) or reveals
//! `p_i = q_i + 1` and floods the machine with a stream of tiny jobs. In the
//! second case [`lemma3_opt_schedule`] builds the adversary's own schedule
//! explicitly so its cost can be compared with the analytic bound.

use serde::Serialize;

use crate::engine::{simulate, simulate_adaptive, CostSummary, Options, Trace};
use crate::error::{Error, Result};
use crate::policy::{Decision, Scheduler, VisibleState};
use crate::power::PowerFunction;
use crate::workload::{
    batch, AdaptiveWorkload, Directives, Instance, JobId, JobSize, JobSpec, Watch, WorkloadView,
};

/// Relative slack used when rounding real counts up to integers, so that
/// e.g. `k P(v) = 2.0000000000000004` still gives `n = 2`.
const CEIL_TOL: f64 = 1e-9;

/// Largest stream the adversary agrees to simulate.
pub const MAX_STREAM_JOBS: u64 = 2_000_000;

/// Completion slack for the adversary's own schedule.
const SCHEDULE_TOL: f64 = 1e-9;

fn ceil_tol(x: f64) -> f64 {
    (x - CEIL_TOL * x.abs().max(1.0)).ceil()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma3Params {
    pub k: f64,
    pub v: f64,
    pub power: PowerFunction,
    pub epsilon: f64,
}

impl Lemma3Params {
    /// Parameters with the default spacing `1/(2 n^5 v^2)`.
    pub fn new(k: f64, v: f64, power: PowerFunction) -> Result<Self> {
        if !(k.is_finite() && k >= 1.0) {
            return Err(Error::InvalidParameter(format!("k must be >= 1, got {k}")));
        }
        if !(v.is_finite() && v >= 1.0) {
            return Err(Error::InvalidParameter(format!("v must be >= 1, got {v}")));
        }
        let pv = power.eval(v)?;
        if pv < 1.0 {
            return Err(Error::InvalidParameter(format!("P(v) = {pv} must be >= 1")));
        }
        let mut p = Self { k, v, power, epsilon: 0.0 };
        p.epsilon = 0.5 * p.epsilon_limit();
        Ok(p)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        let limit = self.epsilon_limit();
        if !(epsilon > 0.0 && epsilon < limit) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in (0, {limit}), got {epsilon}"
            )));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    /// Strict upper bound `1/(n^5 v^2)` on the stream spacing.
    pub fn epsilon_limit(&self) -> f64 {
        1.0 / ((self.n() as f64).powi(5) * self.v * self.v)
    }

    pub fn power_at_v(&self) -> f64 {
        self.power.eval_extended(self.v).unwrap_or(f64::INFINITY)
    }

    /// `ceil(k P(v))`.
    pub fn n(&self) -> u64 {
        ceil_tol(self.k * self.power_at_v()).max(1.0) as u64
    }

    /// `ceil(n^4 / epsilon)`.
    pub fn stream_count(&self) -> u64 {
        ceil_tol((self.n() as f64).powi(4) / self.epsilon) as u64
    }

    pub fn small_job_size(&self) -> f64 {
        self.epsilon * self.v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `G(T) >= k n^3`: all sizes revealed as `n`.
    BigCost,
    /// `G(T) < k n^3`: sizes `q_i + 1` and a stream of small jobs.
    Lagging,
}

/// What the adversary saw when its watch fired.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriggerRecord {
    pub time: f64,
    pub cost: f64,
    pub trigger: JobId,
    /// Work processed on each big job at the trigger time, by id.
    pub processed: Vec<(JobId, f64)>,
    pub branch: Branch,
    pub sizes: Vec<(JobId, f64)>,
}

/// The adaptive strategy. Single use: bind one instance to one simulation.
#[derive(Debug, Clone)]
pub struct Lemma3Adversary {
    params: Lemma3Params,
    record: Option<TriggerRecord>,
}

impl Lemma3Adversary {
    pub fn new(params: Lemma3Params) -> Self {
        Self { params, record: None }
    }

    pub fn params(&self) -> &Lemma3Params {
        &self.params
    }

    pub fn record(&self) -> Option<&TriggerRecord> {
        self.record.as_ref()
    }
}

impl AdaptiveWorkload for Lemma3Adversary {
    fn initial_jobs(&self) -> Vec<JobSpec> {
        batch(self.params.n() as usize, JobSize::Open, 0.0)
            .expect("n >= 1")
            .jobs()
            .to_vec()
    }

    fn watches(&self) -> Vec<Watch> {
        match self.record {
            Some(_) => Vec::new(),
            None => vec![Watch::AnyJobProcessed { work: self.params.n() as f64 }],
        }
    }

    fn on_event(&mut self, view: &WorkloadView<'_>) -> Result<Directives> {
        if self.record.is_some() {
            return Ok(Directives::default());
        }
        let n = self.params.n() as f64;
        let k = self.params.k;
        let cost = view.cost();
        let processed: Vec<(JobId, f64)> = view.jobs.iter().map(|j| (j.id, j.processed)).collect();
        let (branch, directives) = if cost >= k * n.powi(3) {
            let finalize = processed.iter().map(|&(id, _)| (id, n)).collect();
            (Branch::BigCost, Directives { finalize, release: Vec::new() })
        } else {
            let finalize = processed.iter().map(|&(id, q)| (id, q + 1.0)).collect();
            let eps = self.params.epsilon;
            let size = self.params.small_job_size();
            let release = (0..self.params.stream_count())
                .map(|i| (view.now + i as f64 * eps, JobSize::Finite(size)))
                .collect();
            (Branch::Lagging, Directives { finalize, release })
        };
        self.record = Some(TriggerRecord {
            time: view.now,
            cost,
            trigger: view.trigger,
            processed,
            branch,
            sizes: directives.finalize.clone(),
        });
        Ok(directives)
    }
}

/// `k n^3 + 2 n^4 + n^4 P(v) + n + n P(1)`.
pub fn lemma3_opt_bound(params: &Lemma3Params) -> f64 {
    let n = params.n() as f64;
    let p1 = params.power.eval_extended(1.0).unwrap_or(f64::INFINITY);
    params.k * n.powi(3) + 2.0 * n.powi(4) + n.powi(4) * params.power_at_v() + n + n * p1
}

/// Cost reference for the big-cost branch: `n` jobs of size `n` run one
/// after another at speed 1.
pub fn lemma3_big_cost_reference(params: &Lemma3Params) -> f64 {
    2.0 * (params.n() as f64).powi(3)
}

#[derive(Debug, Clone)]
pub struct Lemma3Outcome {
    pub params: Lemma3Params,
    pub record: TriggerRecord,
    pub alg_trace: Trace,
    pub alg_cost: CostSummary,
    pub opt_bound: f64,
    /// Explicit adversary schedule, lagging branch only.
    pub opt_trace: Option<Trace>,
    /// Upper bound on OPT used for the ratio.
    pub opt_reference: f64,
    pub ratio_lower: f64,
}

impl Lemma3Outcome {
    pub fn branch(&self) -> Branch {
        self.record.branch
    }

    pub fn opt_cost(&self) -> Option<f64> {
        self.opt_trace.as_ref().map(|t| t.cost(None).total)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::json!({
            "branch": self.record.branch,
            "T": self.record.time,
            "G_T": self.record.cost,
            "n": self.params.n(),
            "k": self.params.k,
            "v": self.params.v,
            "epsilon": self.params.epsilon,
            "stream_count": match self.record.branch {
                Branch::Lagging => self.params.stream_count(),
                Branch::BigCost => 0,
            },
            "trigger": self.record.trigger,
            "processed": self.record.processed.iter().map(|(_, q)| *q).collect::<Vec<_>>(),
            "sizes": self.record.sizes.iter().map(|(_, p)| *p).collect::<Vec<_>>(),
            "alg_cost": self.alg_cost.to_json_value(),
            "opt_bound": self.opt_bound,
            "opt_cost": self.opt_cost(),
            "opt_reference": self.opt_reference,
            "ratio_lower": self.ratio_lower,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_json_value())?)
    }
}

/// Runs the adversary against `scheduler`, and in the lagging branch also
/// constructs and checks the adversary's schedule.
pub fn run_lemma3(params: &Lemma3Params, scheduler: &dyn Scheduler, opts: &Options) -> Result<Lemma3Outcome> {
    let count = params.stream_count();
    if count > MAX_STREAM_JOBS {
        return Err(Error::SizeLimit(format!(
            "stream of {count} small jobs exceeds the limit of {MAX_STREAM_JOBS}"
        )));
    }
    let mut adversary = Lemma3Adversary::new(*params);
    let alg_trace = simulate_adaptive(&mut adversary, scheduler, &params.power, opts).map_err(|e| match e {
        Error::Stall { time, reason } => Error::Stall {
            time,
            reason: format!(
                "{reason}; {} never processed any job to {} units",
                scheduler.name(),
                params.n()
            ),
        },
        other => other,
    })?;
    let record = adversary.record.ok_or_else(|| Error::Stall {
        time: alg_trace.end,
        reason: "adversary watch never fired".into(),
    })?;
    let alg_cost = alg_trace.cost(None);
    let opt_bound = lemma3_opt_bound(params);
    let (opt_trace, opt_reference) = match record.branch {
        Branch::BigCost => (None, lemma3_big_cost_reference(params)),
        Branch::Lagging => {
            let tr = lemma3_opt_schedule(&alg_trace, params, &record, opts)?;
            let c = tr.cost(None).total;
            (Some(tr), c.min(opt_bound))
        }
    };
    Ok(Lemma3Outcome {
        params: *params,
        ratio_lower: alg_cost.total / opt_reference,
        record,
        alg_trace,
        alg_cost,
        opt_bound,
        opt_trace,
        opt_reference,
    })
}

/// The adversary's schedule for the lagging branch, as a scripted scheduler.
struct MirrorSchedule<'a> {
    alg: &'a Trace,
    t_trigger: f64,
    trigger: JobId,
    n: u64,
    v: f64,
    stream_end: f64,
}

impl MirrorSchedule<'_> {
    fn snap(t: f64) -> f64 {
        1e-12 * t.abs().max(1.0)
    }

    fn is_big(&self, id: JobId) -> bool {
        id.0 <= self.n
    }

    /// Speed profile of ALG with the trigger's work spread over all big jobs.
    fn mirror(&self, state: &VisibleState) -> (Decision, Option<f64>) {
        let now = state.now;
        let tol = Self::snap(now);
        let Some(iv) = self.alg.intervals.iter().find(|iv| iv.end - now > tol && iv.start <= now + tol) else {
            return (Decision::idle(), None);
        };
        let n = self.n as f64;
        let spread = iv.job(self.trigger).map_or(0.0, |j| j.share) / n;
        let mut allocation: Vec<(JobId, f64)> = state
            .active
            .iter()
            .filter(|j| self.is_big(j.id))
            .map(|j| {
                let own = if j.id == self.trigger { 0.0 } else { iv.job(j.id).map_or(0.0, |x| x.share) };
                (j.id, own + spread)
            })
            .collect();
        allocation.sort_by_key(|&(id, _)| id);
        let sum: f64 = allocation.iter().map(|(_, f)| f).sum();
        let speed = if sum > 0.0 { iv.speed } else { 0.0 };
        if sum > 0.0 {
            allocation.iter_mut().for_each(|(_, f)| *f /= sum);
        } else {
            allocation.clear();
        }
        let horizon = iv.end.min(self.t_trigger) - now;
        (Decision { speed, allocation }, Some(horizon))
    }
}

impl Scheduler for MirrorSchedule<'_> {
    fn name(&self) -> &str {
        "adversary"
    }

    fn requires_clairvoyance(&self) -> bool {
        true
    }

    fn decide(&self, state: &VisibleState) -> Result<Decision> {
        Ok(self.plan(state).0)
    }

    fn decision_horizon(&self, state: &VisibleState, _decision: &Decision) -> Option<f64> {
        self.plan(state).1
    }
}

impl MirrorSchedule<'_> {
    fn plan(&self, state: &VisibleState) -> (Decision, Option<f64>) {
        let now = state.now;
        if now < self.t_trigger - Self::snap(self.t_trigger) {
            return self.mirror(state);
        }
        if let Some(small) = state.active.iter().find(|j| !self.is_big(j.id)) {
            return (Decision { speed: self.v, allocation: vec![(small.id, 1.0)] }, None);
        }
        if now < self.stream_end - SCHEDULE_TOL {
            // between a completion and the next release
            return (Decision::idle(), None);
        }
        let big = state
            .active
            .iter()
            .filter(|j| self.is_big(j.id))
            .min_by_key(|j| (j.id == self.trigger, j.id));
        match big {
            Some(j) => (Decision { speed: 1.0, allocation: vec![(j.id, 1.0)] }, None),
            None => (Decision::idle(), None),
        }
    }
}

/// Builds the adversary's schedule for a lagging-branch run and checks the
/// properties the cost bound relies on: big jobs other than the trigger are
/// done by `T`, the trigger still needs `n` units, and each small job ends
/// before the next one arrives.
pub fn lemma3_opt_schedule(
    alg_trace: &Trace,
    params: &Lemma3Params,
    record: &TriggerRecord,
    opts: &Options,
) -> Result<Trace> {
    if record.branch != Branch::Lagging {
        return Err(Error::InvalidParameter("the adversary schedule exists only for the lagging branch".into()));
    }
    let t = record.time;
    if alg_trace.end < t {
        return Err(Error::Input(format!("trace ends at {} before the trigger time {t}", alg_trace.end)));
    }
    let n = params.n();
    let count = params.stream_count();
    let eps = params.epsilon;
    let instance = Instance::from_jobs(alg_trace.jobs.iter().map(|j| JobSpec {
        id: j.id,
        release: j.release,
        size: j.size.map_or(JobSize::Open, JobSize::Finite),
    }).collect());
    if instance.has_open_jobs() {
        return Err(Error::Input("trace still has jobs of unknown size".into()));
    }
    let script = MirrorSchedule {
        alg: alg_trace,
        t_trigger: t,
        trigger: record.trigger,
        n,
        v: params.v,
        stream_end: t + count as f64 * eps,
    };
    let trace = simulate(&instance, &script, &params.power, opts)?;

    let infeasible = |what: String| Err(Error::Infeasible(what));
    for j in trace.jobs.iter().filter(|j| j.id.0 <= n) {
        let done = j.completion.unwrap_or(f64::INFINITY);
        if j.id == record.trigger {
            let rem = j.size.unwrap_or(0.0) - trace.processed_at(j.id, t);
            if (rem - n as f64).abs() > SCHEDULE_TOL * n as f64 {
                return infeasible(format!("trigger job {} has {rem} remaining at T, expected {n}", j.id));
            }
        } else if done > t + SCHEDULE_TOL * t.max(1.0) {
            return infeasible(format!("{} completes at {done}, after T = {t}", j.id));
        }
    }
    let small: Vec<_> = trace.jobs.iter().filter(|j| j.id.0 > n).collect();
    for (i, j) in small.iter().enumerate() {
        let deadline = small.get(i + 1).map_or(script.stream_end, |next| next.release);
        let done = j.completion.unwrap_or(f64::INFINITY);
        if done > deadline + SCHEDULE_TOL {
            return infeasible(format!("small job {} completes at {done}, after {deadline}", j.id));
        }
    }
    let bad = trace.check_invariants();
    if !bad.is_empty() {
        return Err(Error::Infeasible(format!("adversary schedule violates trace invariants: {}", bad.join("; "))));
    }
    Ok(trace)
}

/// Parameters for the polynomial lower bound: `k = alpha^(1/3 - eps)`, `v = 1`.
pub fn theorem2_params(alpha: f64, eps: f64) -> Result<Lemma3Params> {
    if !(eps > 0.0 && eps < 1.0 / 3.0) {
        return Err(Error::InvalidParameter(format!("eps must lie in (0, 1/3), got {eps}")));
    }
    let power = PowerFunction::polynomial(alpha)?;
    Lemma3Params::new(alpha.powf(1.0 / 3.0 - eps), 1.0, power)
}

/// Smallest representable speed `v` with `P(v) >= 16 k^4` for the
/// pathological power function, starting from the closed form
/// `2 - (16 k^4)^(-4) / 4`.
///
/// Fails once `k` is so large that no double below 2 reaches the target.
pub fn theorem3_speed(k: f64) -> Result<f64> {
    if !(k.is_finite() && k >= 1.0) {
        return Err(Error::InvalidParameter(format!("k must be >= 1, got {k}")));
    }
    let p = PowerFunction::pathological();
    let target = 16.0 * k.powi(4);
    let mut v = 2.0 - 0.25 * target.powi(-4);
    loop {
        if v >= 2.0 {
            return Err(Error::Domain(format!(
                "no speed below 2 reaches power {target} in double precision"
            )));
        }
        if p.eval(v)? >= target {
            return Ok(v);
        }
        v = v.next_up();
    }
}

/// Growth of the pathological power function just above `theorem3_speed(k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthCheck {
    pub k: f64,
    pub v: f64,
    pub power_at_v: f64,
    /// `1 / (16 (k P(v))^3)`.
    pub step: f64,
    pub probe: f64,
    /// Whether `v + step` is still a legal speed. It never is here: the step
    /// exceeds the gap `2 - v`, so the probe lands past the blow-up point.
    pub probe_in_domain: bool,
    /// `P(v + step) / P(v)`, infinite past the domain bound.
    pub ratio: f64,
    /// First-order ratio `(P(v) + P'(v) step) / P(v) = 1 + P(v)^4 step`.
    pub linearized_ratio: f64,
}

impl GrowthCheck {
    /// Both ratios reach `k` within `rel` relative slack.
    pub fn holds(&self, rel: f64) -> bool {
        let need = self.k * (1.0 - rel);
        self.ratio >= need && self.linearized_ratio >= need
    }
}

pub fn pathological_growth(k: f64) -> Result<GrowthCheck> {
    let v = theorem3_speed(k)?;
    let p = PowerFunction::pathological();
    let pv = p.eval(v)?;
    let step = 1.0 / (16.0 * (k * pv).powi(3));
    let probe = v + step;
    Ok(GrowthCheck {
        k,
        v,
        power_at_v: pv,
        step,
        probe,
        probe_in_domain: probe < p.domain_upper(),
        ratio: p.eval_extended(probe)? / pv,
        linearized_ratio: (pv + p.derivative(v)? * step) / pv,
    })
}
