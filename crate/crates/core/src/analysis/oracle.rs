//! Reference optimum for small instances.
//!
//! For unit-weight flow at a given speed profile, SRPT is the optimal job
//! order, so only the speed profile has to be searched. Profiles are
//! piecewise constant on a `dt` grid with speeds drawn from a finite set of
//! levels. The search starts from the best constant profile and then does
//! first-improvement local search (single steps and whole suffixes nudged
//! by one or two levels). Refined grids are solved hierarchically: the
//! coarser optimum is lifted onto the finer grid, where it has the same
//! cost, and improved from there, so refining never makes the answer worse.

use serde::Serialize;

use crate::engine::{simulate, Options, Trace, COMPLETION_TOL};
use crate::error::{Error, Result};
use crate::policy::{select_srpt, Decision, Scheduler, VisibleState};
use crate::power::PowerFunction;
use crate::workload::Instance;

pub const MAX_JOBS: usize = 5;
pub const MAX_TOTAL_WORK: f64 = 10.0;

/// Steps per unit of total work in the default grid.
const DEFAULT_STEPS: f64 = 200.0;
const DEFAULT_LEVELS: usize = 64;
const MAX_PASSES: usize = 40;

/// Speed grid at some refinement depth below a base grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleGrid {
    base_dt: f64,
    base_levels: Vec<f64>,
    depth: u32,
}

/// Speed minimizing `1/s + s^(alpha-1)`, the per-unit-work cost of a lone job.
pub fn single_job_speed(alpha: f64) -> f64 {
    (alpha - 1.0).powf(-1.0 / alpha)
}

impl OracleGrid {
    /// `levels` must be positive and strictly increasing.
    pub fn new(dt: f64, levels: Vec<f64>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter(format!("grid step must be > 0, got {dt}")));
        }
        if levels.is_empty() || levels[0] <= 0.0 || levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "speed levels must be positive and strictly increasing".into(),
            ));
        }
        Ok(Self { base_dt: dt, base_levels: levels, depth: 0 })
    }

    /// `dt = W/200` and 64 geometric levels on `[0.1 s*, 4 s*]`.
    pub fn default_for(instance: &Instance, power: &PowerFunction) -> Result<Self> {
        let alpha = power.alpha().ok_or_else(|| {
            Error::InvalidParameter("the default oracle grid needs a polynomial power function".into())
        })?;
        let s = single_job_speed(alpha);
        let work = instance.total_work();
        let dt = if work > 0.0 { work / DEFAULT_STEPS } else { 1.0 };
        Self::new(dt, geometric(0.1 * s, 4.0 * s, DEFAULT_LEVELS))
    }

    /// Half the step and a geometric midpoint between neighbouring levels.
    pub fn refine(&self) -> Self {
        Self { depth: self.depth + 1, ..self.clone() }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn dt(&self) -> f64 {
        self.base_dt / 2f64.powi(self.depth as i32)
    }

    pub fn levels(&self) -> Vec<f64> {
        levels_at(&self.base_levels, self.depth)
    }

    fn at_depth(&self, depth: u32) -> Self {
        Self { depth, ..self.clone() }
    }
}

fn geometric(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let r = (hi / lo).ln() / (count - 1) as f64;
    (0..count).map(|i| if i + 1 == count { hi } else { lo * (r * i as f64).exp() }).collect()
}

fn levels_at(base: &[f64], depth: u32) -> Vec<f64> {
    let mut v = base.to_vec();
    for _ in 0..depth {
        let mut next = Vec::with_capacity(2 * v.len() - 1);
        for w in v.windows(2) {
            next.push(w[0]);
            next.push((w[0] * w[1]).sqrt());
        }
        next.push(*v.last().expect("non-empty"));
        v = next;
    }
    v
}

#[derive(Debug, Clone, Copy)]
struct State {
    t: f64,
    rem: [f64; MAX_JOBS],
    next: usize,
    done: usize,
    flow: f64,
    energy: f64,
}

/// Exact SRPT simulation of a step profile.
struct Evaluator {
    release: Vec<f64>,
    size: Vec<f64>,
    dt: f64,
    speed: Vec<f64>,
    power: Vec<f64>,
}

impl Evaluator {
    fn start(&self) -> State {
        let mut rem = [0.0; MAX_JOBS];
        rem[..self.size.len()].copy_from_slice(&self.size);
        State { t: 0.0, rem, next: 0, done: 0, flow: 0.0, energy: 0.0 }
    }

    fn all_done(&self, st: &State) -> bool {
        st.done == self.size.len()
    }

    /// Advances to `until` (or to completion when infinite) at one level.
    fn advance(&self, st: &mut State, level: usize, until: f64) {
        let (s, p) = (self.speed[level], self.power[level]);
        let n = self.size.len();
        while st.t < until && !self.all_done(st) {
            while st.next < n && self.release[st.next] <= st.t {
                st.next += 1;
            }
            let next_release = self.release.get(st.next).copied().unwrap_or(f64::INFINITY);
            let mut pick: Option<usize> = None;
            let mut active = 0usize;
            for i in 0..st.next {
                if st.rem[i] > 0.0 {
                    active += 1;
                    if pick.is_none_or(|b| st.rem[i] < st.rem[b]) {
                        pick = Some(i);
                    }
                }
            }
            let Some(j) = pick else {
                st.t = next_release.min(until);
                continue;
            };
            let finish = st.rem[j] / s;
            let gap = (until - st.t).min(next_release - st.t);
            let d = finish.min(gap);
            st.flow += active as f64 * d;
            st.energy += p * d;
            if finish <= gap {
                st.rem[j] = 0.0;
                st.done += 1;
                st.t += d;
            } else {
                st.rem[j] -= s * d;
                if st.rem[j] <= COMPLETION_TOL {
                    st.rem[j] = 0.0;
                    st.done += 1;
                }
                st.t = if until - st.t <= next_release - st.t { until } else { next_release };
            }
        }
    }

    fn step(&self, st: &mut State, k: usize, level: usize) {
        self.advance(st, level, (k + 1) as f64 * self.dt);
    }

    fn finish(&self, st: &mut State, tail: usize) -> f64 {
        self.advance(st, tail, f64::INFINITY);
        st.flow + st.energy
    }

    /// Cost of `profile` from a cached state at the start of step `k`.
    fn cost_from(&self, mut st: State, k: usize, profile: &[usize]) -> f64 {
        for (i, &l) in profile.iter().enumerate().skip(k) {
            if self.all_done(&st) {
                return st.flow + st.energy;
            }
            self.step(&mut st, i, l);
        }
        self.finish(&mut st, *profile.last().expect("non-empty profile"))
    }

    /// States at the start of every step, plus the final cost.
    fn states(&self, profile: &[usize]) -> (Vec<State>, f64) {
        let mut out = Vec::with_capacity(profile.len() + 1);
        let mut st = self.start();
        for (i, &l) in profile.iter().enumerate() {
            out.push(st);
            self.step(&mut st, i, l);
        }
        out.push(st);
        let cost = self.finish(&mut st, *profile.last().expect("non-empty profile"));
        (out, cost)
    }

    fn rebuild(&self, states: &mut [State], from: usize, profile: &[usize]) {
        let mut st = states[from];
        for (i, &l) in profile.iter().enumerate().skip(from) {
            self.step(&mut st, i, l);
            states[i + 1] = st;
        }
    }
}

fn local_search(ev: &Evaluator, profile: &mut [usize], levels: usize) -> f64 {
    let (mut states, mut best) = ev.states(profile);
    let steps = profile.len();
    for _ in 0..MAX_PASSES {
        let mut improved = false;
        for k in 0..steps {
            if ev.all_done(&states[k]) {
                break;
            }
            let cur = profile[k];
            for d in [1i64, -1, 2, -2] {
                let nl = cur as i64 + d;
                if nl < 0 || nl >= levels as i64 {
                    continue;
                }
                profile[k] = nl as usize;
                let c = ev.cost_from(states[k], k, profile);
                if c < best {
                    best = c;
                    ev.rebuild(&mut states, k, profile);
                    improved = true;
                    break;
                }
                profile[k] = cur;
            }
        }
        for k in 0..steps {
            if ev.all_done(&states[k]) {
                break;
            }
            for d in [1i64, -1] {
                let ok = profile[k..].iter().all(|&l| {
                    let nl = l as i64 + d;
                    nl >= 0 && nl < levels as i64
                });
                if !ok {
                    continue;
                }
                let saved = profile[k..].to_vec();
                profile[k..].iter_mut().for_each(|l| *l = (*l as i64 + d) as usize);
                let c = ev.cost_from(states[k], k, profile);
                if c < best {
                    best = c;
                    ev.rebuild(&mut states, k, profile);
                    improved = true;
                    break;
                }
                profile[k..].copy_from_slice(&saved);
            }
        }
        if !improved {
            break;
        }
    }
    best
}

/// Replays a step profile through the engine, choosing jobs by SRPT.
#[derive(Debug, Clone)]
pub struct ProfileScheduler {
    dt: f64,
    speeds: Vec<f64>,
}

impl ProfileScheduler {
    pub fn new(dt: f64, speeds: Vec<f64>) -> Result<Self> {
        if speeds.is_empty() || speeds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidParameter("profile speeds must be positive".into()));
        }
        Ok(Self { dt, speeds })
    }

    fn step_at(&self, now: f64) -> usize {
        let k = (now / self.dt).floor().max(0.0) as usize;
        let boundary = (k + 1) as f64 * self.dt;
        if boundary - now <= 1e-12 * now.max(1.0) {
            k + 1
        } else {
            k
        }
    }

    fn speed(&self, k: usize) -> f64 {
        self.speeds.get(k).copied().unwrap_or(*self.speeds.last().expect("non-empty"))
    }
}

impl Scheduler for ProfileScheduler {
    fn name(&self) -> &str {
        "oracle"
    }

    fn requires_clairvoyance(&self) -> bool {
        true
    }

    fn decide(&self, state: &VisibleState) -> Result<Decision> {
        let pick = select_srpt(state)?;
        if pick.is_empty() {
            return Ok(Decision::idle());
        }
        Ok(Decision::equal_split(self.speed(self.step_at(state.now)), pick))
    }

    fn decision_horizon(&self, state: &VisibleState, _decision: &Decision) -> Option<f64> {
        let k = self.step_at(state.now);
        (k < self.speeds.len()).then(|| (k + 1) as f64 * self.dt - state.now)
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Cost of `trace`.
    pub cost: f64,
    /// Cost of the same profile under the internal evaluator.
    pub search_cost: f64,
    pub trace: Trace,
    pub dt: f64,
    /// Speed of each step; the last one continues until all work is done.
    pub profile: Vec<f64>,
}

/// Best SRPT schedule over step profiles on `grid`, an upper bound on the
/// optimal flow plus energy.
pub fn oracle_opt(instance: &Instance, power: &PowerFunction, grid: &OracleGrid) -> Result<OracleResult> {
    if instance.len() > MAX_JOBS {
        return Err(Error::SizeLimit(format!("{} jobs, the oracle handles at most {MAX_JOBS}", instance.len())));
    }
    if instance.has_open_jobs() {
        return Err(Error::Input("the oracle needs every job size".into()));
    }
    let work = instance.total_work();
    if work > MAX_TOTAL_WORK {
        return Err(Error::SizeLimit(format!("total work {work} exceeds {MAX_TOTAL_WORK}")));
    }
    let bad = instance.validate();
    if !bad.is_empty() {
        return Err(Error::Input(bad.join("; ")));
    }
    if instance.is_empty() {
        let trace = simulate(instance, &ProfileScheduler::new(grid.dt(), vec![1.0])?, power, &Options::default())?;
        return Ok(OracleResult { cost: 0.0, search_cost: 0.0, trace, dt: grid.dt(), profile: Vec::new() });
    }

    let release: Vec<f64> = instance.jobs().iter().map(|j| j.release).collect();
    let size: Vec<f64> = instance.jobs().iter().map(|j| j.size.finite().expect("checked")).collect();
    let last_release = release.iter().copied().fold(0.0, f64::max);

    let mut profile: Vec<usize> = Vec::new();
    let mut search_cost = f64::INFINITY;
    let mut ev = None;
    for depth in 0..=grid.depth() {
        let g = grid.at_depth(depth);
        let speed = g.levels();
        let power_levels = speed.iter().map(|&s| power.eval(s)).collect::<Result<Vec<_>>>()?;
        let dt = g.dt();
        let e = Evaluator { release: release.clone(), size: size.clone(), dt, speed, power: power_levels };
        if depth == 0 {
            // long enough to finish at the median level
            let mid = e.speed[e.speed.len() / 2];
            let steps = ((last_release + work / mid) / dt).ceil().max(1.0) as usize;
            let (best_level, _) = (0..e.speed.len())
                .map(|l| (l, e.cost_from(e.start(), 0, &vec![l; steps])))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            profile = vec![best_level; steps];
        } else {
            profile = profile.iter().flat_map(|&l| [2 * l, 2 * l]).collect();
        }
        search_cost = local_search(&e, &mut profile, e.speed.len());
        ev = Some(e);
    }
    let ev = ev.expect("at least one depth");
    // drop steps after the last job finished
    let (states, _) = ev.states(&profile);
    if let Some(k) = states.iter().position(|s| ev.all_done(s)) {
        profile.truncate(k.max(1));
    }
    let speeds: Vec<f64> = profile.iter().map(|&l| ev.speed[l]).collect();
    let sched = ProfileScheduler::new(ev.dt, speeds.clone())?;
    let opts = Options { max_events: 10_000_000, ..Options::default() };
    let trace = simulate(instance, &sched, power, &opts)?;
    Ok(OracleResult { cost: trace.cost(None).total, search_cost, trace, dt: ev.dt, profile: speeds })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingleJobOpt {
    pub speed: f64,
    pub cost: f64,
}

/// Optimal constant-speed schedule for one job of work `p` under `s^alpha`.
pub fn single_job_opt(p: f64, alpha: f64) -> Result<SingleJobOpt> {
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::InvalidParameter(format!("work must be > 0, got {p}")));
    }
    if !(alpha.is_finite() && alpha > 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must be > 1, got {alpha}")));
    }
    let s = single_job_speed(alpha);
    Ok(SingleJobOpt { speed: s, cost: p * (1.0 / s + s.powf(alpha - 1.0)) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{batch, JobSize};
    use approx::assert_relative_eq;

    fn cube() -> PowerFunction {
        PowerFunction::polynomial(3.0).unwrap()
    }

    #[test]
    fn single_job_closed_form() {
        let a = single_job_opt(1.0, 3.0).unwrap();
        assert_relative_eq!(a.speed, 0.793_700_525_984_1, max_relative = 1e-12);
        assert_relative_eq!(a.cost, 1.889_881_574_842_3, max_relative = 1e-12);
        assert_relative_eq!(single_job_opt(2.0, 3.0).unwrap().cost, 2.0 * a.cost, max_relative = 1e-14);
        let b = single_job_opt(1.5, 2.0).unwrap();
        assert_relative_eq!(b.speed, 1.0);
        assert_relative_eq!(b.cost, 3.0);
        assert!(single_job_opt(0.0, 3.0).is_err());
        assert!(single_job_opt(1.0, 1.0).is_err());
    }

    #[test]
    fn single_job_matches_brute_force() {
        // scan 1/s + s^(alpha-1) on a fine grid
        for alpha in [1.5, 2.0, 3.0, 4.5] {
            let best = (1..200_000)
                .map(|i| i as f64 * 1e-5)
                .map(|s| 1.0 / s + s.powf(alpha - 1.0))
                .fold(f64::INFINITY, f64::min);
            assert_relative_eq!(single_job_opt(1.0, alpha).unwrap().cost, best, max_relative = 1e-8);
        }
    }

    #[test]
    fn level_doubling_is_nested() {
        let g = OracleGrid::new(0.1, vec![1.0, 4.0, 16.0]).unwrap();
        let r = g.refine();
        assert_eq!(r.dt(), 0.05);
        assert_eq!(r.levels(), vec![1.0, 2.0, 4.0, 8.0, 16.0]);
        assert_eq!(r.refine().levels().len(), 9);
        assert!(OracleGrid::new(0.0, vec![1.0]).is_err());
        assert!(OracleGrid::new(0.1, vec![2.0, 1.0]).is_err());
    }

    #[test]
    fn default_grid_brackets_the_anchor() {
        let inst = batch(1, JobSize::Finite(1.0), 0.0).unwrap();
        let g = OracleGrid::default_for(&inst, &cube()).unwrap();
        assert_relative_eq!(g.dt(), 1.0 / 200.0);
        let l = g.levels();
        assert_eq!(l.len(), 64);
        let s = single_job_speed(3.0);
        assert_relative_eq!(l[0], 0.1 * s, max_relative = 1e-14);
        assert_relative_eq!(l[63], 4.0 * s, max_relative = 1e-14);
        assert!(OracleGrid::default_for(&inst, &PowerFunction::pathological()).is_err());
    }

    #[test]
    fn single_job_oracle_close_to_closed_form() {
        let inst = batch(1, JobSize::Finite(1.0), 0.0).unwrap();
        let g = OracleGrid::default_for(&inst, &cube()).unwrap();
        let r = oracle_opt(&inst, &cube(), &g).unwrap();
        assert!(r.cost >= 1.889_881_574_842_3 - 1e-9);
        assert!((r.cost - 1.889_88).abs() < 1e-3, "{}", r.cost);
        assert_relative_eq!(r.cost, r.search_cost, max_relative = 1e-9);
        assert!(r.trace.check_invariants().is_empty());
    }

    #[test]
    fn empty_instance_costs_nothing() {
        let g = OracleGrid::new(0.1, vec![1.0]).unwrap();
        let r = oracle_opt(&Instance::empty(), &cube(), &g).unwrap();
        assert_eq!(r.cost, 0.0);
    }

    #[test]
    fn size_limits() {
        let g = OracleGrid::new(0.1, vec![1.0]).unwrap();
        let six = batch(6, JobSize::Finite(0.1), 0.0).unwrap();
        assert!(matches!(oracle_opt(&six, &cube(), &g), Err(Error::SizeLimit(_))));
        let heavy = batch(2, JobSize::Finite(6.0), 0.0).unwrap();
        assert!(matches!(oracle_opt(&heavy, &cube(), &g), Err(Error::SizeLimit(_))));
        let open = batch(1, JobSize::Open, 0.0).unwrap();
        assert!(oracle_opt(&open, &cube(), &g).is_err());
    }

    #[test]
    fn two_jobs_beat_hand_built_schedules() {
        let inst = batch(2, JobSize::Finite(1.0), 0.0).unwrap();
        let g = OracleGrid::default_for(&inst, &cube()).unwrap();
        let r = oracle_opt(&inst, &cube(), &g).unwrap();
        // one after the other at the single-job speed: flows 1/s and 2/s
        let s = single_job_speed(3.0);
        let sequential = 3.0 / s + 2.0 * s * s;
        assert!(r.cost <= sequential, "{} > {sequential}", r.cost);
        // the best constant speed for that order: 3/s + 2 s^2, minimized at s = (3/4)^(1/3)
        let sc = 0.75f64.cbrt();
        assert!(r.cost <= 3.0 / sc + 2.0 * sc * sc + 1e-9);
        assert!(r.trace.check_invariants().is_empty());
    }

    #[test]
    fn refinement_never_hurts() {
        let inst = Instance::from_releases(vec![(0.0, JobSize::Finite(0.7)), (0.4, JobSize::Finite(0.3))]).unwrap();
        let g = OracleGrid::default_for(&inst, &cube()).unwrap();
        let c0 = oracle_opt(&inst, &cube(), &g).unwrap().cost;
        let c1 = oracle_opt(&inst, &cube(), &g.refine()).unwrap().cost;
        assert!(c1 <= c0 + 1e-9, "{c1} > {c0}");
    }

    #[test]
    fn profile_scheduler_follows_steps() {
        let sched = ProfileScheduler::new(0.5, vec![1.0, 2.0]).unwrap();
        let inst = batch(1, JobSize::Finite(2.0), 0.0).unwrap();
        let tr = simulate(&inst, &sched, &cube(), &Options::default()).unwrap();
        // 0.5 units in the first step, 1 in the second, 0.5 more at speed 2
        assert_relative_eq!(tr.end, 1.25, max_relative = 1e-12);
        assert_eq!(tr.intervals.len(), 3);
    }
}
