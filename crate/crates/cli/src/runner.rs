//! Executes prepared scenarios and writes their reports.
//!
//! Layout of the output directory:
//!
//! ```text
//! summary.json                 everything below, condensed
//! instances/<label>.json       the instance itself
//! traces/<label>__<policy>.csv interval trace (also __oracle)
//! costs/<label>__<policy>.json {"flow","energy","total"}
//! verifier/<label>__<policy>.json potential-function report
//! lemma3/<policy>.json         adversary outcome
//! theorem3.json                growth checks
//! compare.json, compare.csv    cross-policy table (compare only)
//! ```
//!
//! Reports carry no timestamps or absolute paths, so reruns are
//! byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use speedscale::adversary::{pathological_growth, run_lemma3, Branch, Lemma3Outcome};
use speedscale::analysis::suite::par_map;
use speedscale::analysis::{oracle_opt, verify, OracleGrid, OracleResult, PotentialParams, VerifierReport};
use speedscale::engine::{simulate, CostSummary, Options, Trace};
use speedscale::policy::{Policy, Scheduler};
use speedscale::power::PowerFunction;

use crate::config::{NamedInstance, Prepared, Work};

/// Result of `run` or `compare`.
#[derive(Debug, Clone)]
pub struct Report {
    pub passed: bool,
    pub out_dir: PathBuf,
    pub summary: Value,
    pub warnings: Vec<String>,
    /// Human-readable table, `compare` only.
    pub table: Option<String>,
}

/// Pending file writes, relative to the output directory.
#[derive(Default)]
struct Files(Vec<(PathBuf, String)>);

impl Files {
    fn add(&mut self, path: impl Into<PathBuf>, body: String) {
        self.0.push((path.into(), body));
    }

    fn write(self, root: &Path) -> Result<()> {
        for (rel, body) in self.0 {
            let path = root.join(rel);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report values serialize");
    s.push('\n');
    s
}

/// File-name-safe form of a policy name.
pub fn slug(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    for c in name.chars() {
        match c {
            'a'..='z' | 'A'..='Z' | '0'..='9' | '.' | '-' => out.push(c),
            '+' => out.push_str("_plus_"),
            '=' => out.push('-'),
            '@' => out.push_str("_at_"),
            _ => {
                if !out.ends_with('_') {
                    out.push('_');
                }
            }
        }
    }
    out.trim_matches('_').to_string()
}

struct PolicyRun {
    policy: String,
    outcome: std::result::Result<RunData, String>,
}

struct RunData {
    trace: Trace,
    cost: CostSummary,
    invariants: Vec<String>,
    ratio: Option<f64>,
    verifier: Option<std::result::Result<VerifierReport, String>>,
}

struct InstanceResult {
    oracle: Option<std::result::Result<OracleResult, String>>,
    runs: Vec<PolicyRun>,
}

fn run_instance(prep: &Prepared, ni: &NamedInstance, with_verifier: bool) -> InstanceResult {
    let power = prep.scenario.power;
    let analysis = &prep.scenario.analysis;
    let opts = Options { max_events: prep.max_events, ..Options::default() };
    let oracle = analysis.oracle.then(|| {
        let mut grid = OracleGrid::default_for(&ni.instance, &power).map_err(|e| e.to_string())?;
        for _ in 0..analysis.oracle_depth {
            grid = grid.refine();
        }
        oracle_opt(&ni.instance, &power, &grid).map_err(|e| e.to_string())
    });
    let reference = match &oracle {
        Some(Ok(o)) => Some(o),
        _ => None,
    };
    let runs = prep
        .policies
        .iter()
        .map(|p| PolicyRun {
            policy: p.name().to_string(),
            outcome: run_policy(p, &ni.instance, &power, &opts, reference, with_verifier.then_some(analysis.samples)),
        })
        .collect();
    InstanceResult { oracle, runs }
}

fn run_policy(
    policy: &Policy,
    instance: &speedscale::workload::Instance,
    power: &PowerFunction,
    opts: &Options,
    reference: Option<&OracleResult>,
    samples: Option<usize>,
) -> std::result::Result<RunData, String> {
    let trace = simulate(instance, policy, power, opts).map_err(|e| e.to_string())?;
    let cost = trace.cost(None);
    let invariants = trace.check_invariants();
    let ratio = reference.filter(|o| o.cost > 0.0).map(|o| cost.total / o.cost);
    let alpha = power.alpha().unwrap_or(f64::NAN);
    let verifier = match (samples, reference) {
        (Some(samples), Some(o)) if policy.is_laps_theorem1(alpha) => Some(
            PotentialParams::new(alpha)
                .and_then(|params| verify(&trace, &o.trace, &params, samples))
                .map_err(|e| e.to_string()),
        ),
        _ => None,
    };
    Ok(RunData { trace, cost, invariants, ratio, verifier })
}

fn verifier_json(rep: &VerifierReport, all_samples: bool) -> Value {
    let mut v = serde_json::to_value(rep).expect("report serializes");
    v["passed"] = json!(rep.passed());
    v["running_samples_total"] = json!(rep.running_samples.len());
    if !all_samples {
        let failing: Vec<_> = rep.running_samples.iter().filter(|s| !s.ok).collect();
        v["running_samples"] = json!(failing);
    }
    v
}

fn verifier_brief(rep: &VerifierReport) -> Value {
    json!({
        "passed": rep.passed(),
        "boundary_ok": rep.boundary_ok,
        "events_ok": rep.events_ok(),
        "running_ok": rep.running_ok(),
        "end_to_end_ok": rep.end_to_end_ok,
        "max_violation": rep.max_violation,
        "events": rep.event_jumps.len(),
        "samples": rep.running_samples.len(),
    })
}

#[derive(Default)]
struct Tally {
    runs: usize,
    errors: usize,
    invariant_failures: usize,
    ratios: Vec<f64>,
    verified: usize,
    verifier_failures: usize,
    max_violation: Option<f64>,
    flow: f64,
    energy: f64,
    total: f64,
    oracle_total: f64,
}

impl Tally {
    fn to_json(&self, policy: &str) -> Value {
        let max_ratio = self.ratios.iter().copied().reduce(f64::max);
        let mean_ratio = (!self.ratios.is_empty()).then(|| self.ratios.iter().sum::<f64>() / self.ratios.len() as f64);
        json!({
            "policy": policy,
            "runs": self.runs,
            "errors": self.errors,
            "invariant_failures": self.invariant_failures,
            "max_ratio": max_ratio,
            "mean_ratio": mean_ratio,
            "verified": self.verified,
            "verifier_failures": self.verifier_failures,
            "max_violation": self.max_violation,
        })
    }
}

fn run_instances(prep: &Prepared, list: &[NamedInstance], with_verifier: bool) -> (Vec<InstanceResult>, Vec<Tally>) {
    let results = par_map(list, |ni| run_instance(prep, ni, with_verifier));
    let mut tallies: Vec<Tally> = prep.policies.iter().map(|_| Tally::default()).collect();
    for r in &results {
        let oracle_cost = match &r.oracle {
            Some(Ok(o)) => Some(o.cost),
            _ => None,
        };
        for (t, run) in tallies.iter_mut().zip(&r.runs) {
            t.runs += 1;
            match &run.outcome {
                Err(_) => t.errors += 1,
                Ok(d) => {
                    if !d.invariants.is_empty() {
                        t.invariant_failures += 1;
                    }
                    t.flow += d.cost.total_flow;
                    t.energy += d.cost.total_energy;
                    t.total += d.cost.total;
                    if let Some(c) = oracle_cost {
                        t.oracle_total += c;
                    }
                    if let Some(x) = d.ratio {
                        t.ratios.push(x);
                    }
                    match &d.verifier {
                        Some(Ok(rep)) => {
                            t.verified += 1;
                            if !rep.passed() {
                                t.verifier_failures += 1;
                            }
                            t.max_violation = Some(t.max_violation.map_or(rep.max_violation, |m| m.max(rep.max_violation)));
                        }
                        Some(Err(_)) => {
                            t.verified += 1;
                            t.verifier_failures += 1;
                        }
                        None => {}
                    }
                }
            }
        }
    }
    (results, tallies)
}

fn header(prep: &Prepared) -> Value {
    json!({
        "scenario": prep.scenario.name,
        "config": prep.file.file_name().map(|f| f.to_string_lossy().into_owned()),
        "power": prep.scenario.power,
        "workload": prep.scenario.workload,
        "analysis": prep.scenario.analysis,
        "max_events": prep.max_events,
        "policies": prep.policies.iter().map(|p| p.name()).collect::<Vec<_>>(),
    })
}

/// Executes every (policy, workload) pair and writes all reports.
pub fn run(prep: &Prepared) -> Result<Report> {
    let mut files = Files::default();
    let mut warnings = Vec::new();
    let mut summary = header(prep);
    let passed = match &prep.work {
        Work::Instances(list) => {
            let verify_on = prep.scenario.analysis.verify;
            let alpha = prep.scenario.power.alpha().unwrap_or(f64::NAN);
            if verify_on && !prep.policies.iter().any(|p| p.is_laps_theorem1(alpha)) {
                warnings.push("analysis.verify is set but no policy is laps_theorem1; nothing to verify".into());
            }
            if list.is_empty() {
                warnings.push("the workload set is empty".into());
            }
            let (results, tallies) = run_instances(prep, list, verify_on);
            let mut rows = Vec::new();
            let mut ok = true;
            for (ni, r) in list.iter().zip(&results) {
                files.add(format!("instances/{}.json", ni.label), pretty(&ni.instance));
                let oracle = r.oracle.as_ref().map(|o| match o {
                    Ok(o) => {
                        if prep.scenario.output.traces {
                            files.add(format!("traces/{}__oracle.csv", ni.label), o.trace.to_csv().unwrap_or_default());
                        }
                        json!({"cost": o.cost, "dt": o.dt, "steps": o.profile.len()})
                    }
                    Err(e) => {
                        ok = false;
                        json!({"error": e})
                    }
                });
                let mut runs = Vec::new();
                for run in &r.runs {
                    let s = slug(&run.policy);
                    match &run.outcome {
                        Err(e) => {
                            ok = false;
                            runs.push(json!({"policy": run.policy, "error": e}));
                        }
                        Ok(d) => {
                            ok &= d.invariants.is_empty();
                            if prep.scenario.output.traces {
                                files.add(format!("traces/{}__{s}.csv", ni.label), d.trace.to_csv().unwrap_or_default());
                            }
                            files.add(format!("costs/{}__{s}.json", ni.label), pretty(&d.cost.to_json_value()));
                            let verifier = d.verifier.as_ref().map(|v| match v {
                                Ok(rep) => {
                                    ok &= rep.passed();
                                    files.add(
                                        format!("verifier/{}__{s}.json", ni.label),
                                        pretty(&verifier_json(rep, prep.scenario.output.all_samples)),
                                    );
                                    verifier_brief(rep)
                                }
                                Err(e) => {
                                    ok = false;
                                    json!({"passed": false, "error": e})
                                }
                            });
                            runs.push(json!({
                                "policy": run.policy,
                                "flow": d.cost.total_flow,
                                "energy": d.cost.total_energy,
                                "total": d.cost.total,
                                "ratio": d.ratio,
                                "invariants_ok": d.invariants.is_empty(),
                                "invariant_violations": d.invariants,
                                "verifier": verifier,
                            }));
                        }
                    }
                }
                rows.push(json!({
                    "label": ni.label,
                    "seed": ni.seed,
                    "jobs": ni.instance.len(),
                    "total_work": ni.instance.total_work(),
                    "oracle": oracle,
                    "runs": runs,
                }));
            }
            summary["instances"] = json!(rows);
            summary["aggregate"] = json!(prep
                .policies
                .iter()
                .zip(&tallies)
                .map(|(p, t)| t.to_json(p.name()))
                .collect::<Vec<_>>());
            ok
        }
        Work::Lemma3(params) => {
            let opts = Options { max_events: prep.max_events, ..Options::default() };
            let outcomes = par_map(&prep.policies, |p| run_lemma3(params, p, &opts));
            let mut ok = true;
            let mut rows = Vec::new();
            for (p, out) in prep.policies.iter().zip(outcomes) {
                let s = slug(p.name());
                match out {
                    Err(e) => {
                        ok = false;
                        rows.push(json!({"policy": p.name(), "error": e.to_string()}));
                    }
                    Ok(o) => {
                        let checks = lemma3_checks(&o);
                        ok &= checks.values().all(|v| v.as_bool() == Some(true));
                        let mut v = o.to_json_value();
                        v["policy"] = json!(p.name());
                        v["checks"] = Value::Object(checks);
                        files.add(format!("lemma3/{s}.json"), pretty(&v));
                        if prep.scenario.output.traces {
                            files.add(format!("traces/lemma3__{s}__alg.csv"), o.alg_trace.to_csv().unwrap_or_default());
                            if let Some(t) = &o.opt_trace {
                                files.add(format!("traces/lemma3__{s}__opt.csv"), t.to_csv().unwrap_or_default());
                            }
                        }
                        rows.push(v);
                    }
                }
            }
            summary["lemma3"] = json!(rows);
            ok
        }
        Work::Theorem3(ks) => {
            let mut ok = true;
            let rows: Vec<Value> = ks
                .iter()
                .map(|&k| match pathological_growth(k) {
                    Ok(g) => {
                        let power_ok = g.power_at_v >= 16.0 * k.powi(4) - 1e-6;
                        let growth_ok = g.holds(1e-3);
                        ok &= power_ok && growth_ok;
                        let mut v = serde_json::to_value(g).expect("serializes");
                        v["power_ok"] = json!(power_ok);
                        v["growth_ok"] = json!(growth_ok);
                        v
                    }
                    Err(e) => {
                        ok = false;
                        json!({"k": k, "error": e.to_string()})
                    }
                })
                .collect();
            files.add("theorem3.json", pretty(&rows));
            summary["theorem3"] = json!(rows);
            ok
        }
    };
    summary["warnings"] = json!(warnings);
    summary["passed"] = json!(passed);
    files.add("summary.json", pretty(&summary));
    files.write(&prep.out_dir)?;
    Ok(Report { passed, out_dir: prep.out_dir.clone(), summary, warnings, table: None })
}

fn lemma3_checks(o: &Lemma3Outcome) -> serde_json::Map<String, Value> {
    let n = o.params.n() as f64;
    let mut m = serde_json::Map::new();
    m.insert("alg_invariants".into(), json!(o.alg_trace.check_invariants().is_empty()));
    m.insert("alg_completed".into(), json!(o.alg_trace.completed_all()));
    match o.record.branch {
        Branch::BigCost => {
            m.insert("branch_condition".into(), json!(o.record.cost >= o.params.k * n.powi(3)));
            m.insert("sizes_equal_n".into(), json!(o.record.sizes.iter().all(|&(_, p)| p == n)));
        }
        Branch::Lagging => {
            m.insert("branch_condition".into(), json!(o.record.cost < o.params.k * n.powi(3)));
            let opt = o.opt_cost().unwrap_or(f64::INFINITY);
            m.insert("opt_within_bound".into(), json!(opt <= o.opt_bound * (1.0 + 1e-9)));
            m.insert(
                "opt_invariants".into(),
                json!(o.opt_trace.as_ref().is_some_and(|t| t.check_invariants().is_empty())),
            );
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub policy: String,
    pub runs: usize,
    pub errors: usize,
    pub total_flow: f64,
    pub energy: f64,
    pub total: f64,
    /// Summed cost over summed oracle cost.
    pub ratio: Option<f64>,
    pub max_ratio: Option<f64>,
}

fn render(rows: &[CompareRow]) -> String {
    let mut s = format!(
        "{:<28} {:>5} {:>14} {:>14} {:>14} {:>10} {:>10}\n",
        "policy", "runs", "total flow", "energy", "total", "ratio", "max ratio"
    );
    let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    for r in rows {
        s.push_str(&format!(
            "{:<28} {:>5} {:>14.6} {:>14.6} {:>14.6} {:>10} {:>10}\n",
            r.policy,
            r.runs,
            r.total_flow,
            r.energy,
            r.total,
            opt(r.ratio),
            opt(r.max_ratio)
        ));
    }
    s
}

fn rows_csv(rows: &[CompareRow]) -> String {
    let mut s = String::from("policy,runs,errors,total_flow,energy,total,ratio,max_ratio\n");
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.policy,
            r.runs,
            r.errors,
            r.total_flow,
            r.energy,
            r.total,
            opt(r.ratio),
            opt(r.max_ratio)
        ));
    }
    s
}

/// One row per policy over the shared workload set.
pub fn compare(prep: &Prepared) -> Result<Report> {
    let mut warnings = Vec::new();
    let mut ok = true;
    let rows: Vec<CompareRow> = match &prep.work {
        Work::Instances(list) => {
            if list.is_empty() {
                warnings.push("the workload set is empty; the table has no data".into());
            }
            let (results, tallies) = run_instances(prep, list, false);
            ok = results.iter().all(|r| {
                r.runs.iter().all(|x| x.outcome.as_ref().is_ok_and(|d| d.invariants.is_empty()))
                    && r.oracle.as_ref().is_none_or(|o| o.is_ok())
            });
            prep.policies
                .iter()
                .zip(&tallies)
                .map(|(p, t)| CompareRow {
                    policy: p.name().to_string(),
                    runs: t.runs,
                    errors: t.errors,
                    total_flow: t.flow,
                    energy: t.energy,
                    total: t.total,
                    ratio: (t.oracle_total > 0.0).then(|| t.total / t.oracle_total),
                    max_ratio: t.ratios.iter().copied().reduce(f64::max),
                })
                .collect()
        }
        Work::Lemma3(params) => {
            let opts = Options { max_events: prep.max_events, ..Options::default() };
            let outcomes = par_map(&prep.policies, |p| run_lemma3(params, p, &opts));
            prep.policies
                .iter()
                .zip(outcomes)
                .map(|(p, o)| match o {
                    Ok(o) => CompareRow {
                        policy: p.name().to_string(),
                        runs: 1,
                        errors: 0,
                        total_flow: o.alg_cost.total_flow,
                        energy: o.alg_cost.total_energy,
                        total: o.alg_cost.total,
                        ratio: Some(o.ratio_lower),
                        max_ratio: Some(o.ratio_lower),
                    },
                    Err(_) => {
                        ok = false;
                        CompareRow {
                            policy: p.name().to_string(),
                            runs: 1,
                            errors: 1,
                            total_flow: 0.0,
                            energy: 0.0,
                            total: 0.0,
                            ratio: None,
                            max_ratio: None,
                        }
                    }
                })
                .collect()
        }
        Work::Theorem3(_) => {
            warnings.push("theorem3 scenarios run no schedules; the table is empty".into());
            Vec::new()
        }
    };
    let table = render(&rows);
    let mut summary = header(prep);
    summary["compare"] = json!(rows);
    summary["warnings"] = json!(warnings);
    summary["passed"] = json!(ok);
    let mut files = Files::default();
    files.add("compare.json", pretty(&summary));
    files.add("compare.csv", rows_csv(&rows));
    files.write(&prep.out_dir)?;
    Ok(Report { passed: ok, out_dir: prep.out_dir.clone(), summary, warnings, table: Some(table) })
}
