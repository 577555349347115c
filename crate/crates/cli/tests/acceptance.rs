//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use speedscale::adversary::{pathological_growth, run_lemma3, theorem3_speed, Branch, Lemma3Params};
use speedscale::analysis::{oracle_opt, random_instance, single_job_opt, young_check, OracleGrid};
use speedscale::engine::{simulate, Options};
use speedscale::policy::Policy;
use speedscale::power::PowerFunction;
use speedscale::workload::{Instance, JobSize};
use speedscale_cli::{load, run, Overrides, Report};

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn scenario(dir: &Path, name: &str, body: &str) -> Report {
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, body).expect("write scenario");
    rerun(dir, name, "first")
}

fn rerun(dir: &Path, name: &str, tag: &str) -> Report {
    let path = dir.join(format!("{name}.json"));
    let prep = load(&path, &Overrides { out: Some(dir.join(tag).join(name)), ..Overrides::default() })
        .unwrap_or_else(|e| panic!("{e}"));
    run(&prep).unwrap_or_else(|e| panic!("{name}: {e:#}"))
}

fn random_suite(alpha: u32, seed: u64) -> String {
    format!(
        r#"{{
  "name": "suite-a{alpha}",
  "power": {{"kind": "polynomial", "alpha": {alpha}.0}},
  "policies": [{{"policy": "laps_theorem1"}}, {{"policy": "srpt_power_jobs"}}, {{"policy": "rr_power_jobs"}}],
  "workload": {{"kind": "random", "seed": {seed}, "count": 100, "max_jobs": 4}},
  "analysis": {{"verify": true, "oracle": true, "samples": 16}}
}}"#
    )
}

const LEMMA3: &str = r#"{
  "name": "lemma3-k2",
  "power": {"kind": "polynomial", "alpha": 3.0},
  "policies": [{"policy": "laps", "delta": 1.0, "beta": 0.16666666666666666}],
  "workload": {"kind": "lemma3", "k": 2.0, "v": 1.0}
}"#;

const THEOREM3: &str = r#"{
  "name": "theorem3",
  "power": {"kind": "pathological"},
  "workload": {"kind": "theorem3", "k": [1.0, 2.0, 4.0]}
}"#;

fn laps_runs(summary: &Value) -> impl Iterator<Item = &Value> {
    summary["instances"]
        .as_array()
        .into_iter()
        .flatten()
        .flat_map(|i| i["runs"].as_array().into_iter().flatten())
        .filter(|r| r["policy"].as_str().is_some_and(|p| p.starts_with("laps-theorem1")))
}

fn potential_conditions(suites: &[(u32, &Report)], elapsed: f64) -> Outcome {
    let mut ok = elapsed <= 60.0;
    let mut parts = Vec::new();
    for (alpha, rep) in suites {
        let runs: Vec<_> = laps_runs(&rep.summary).collect();
        let passed = runs.iter().filter(|r| r["verifier"]["passed"] == Value::Bool(true)).count();
        let max_violation = runs
            .iter()
            .filter_map(|r| r["verifier"]["max_violation"].as_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        ok &= runs.len() >= 100 && passed == runs.len();
        parts.push(format!("alpha={alpha}: {passed}/{} verified, max violation {max_violation:.3e}", runs.len()));
    }
    outcome(ok, format!("{}; {elapsed:.1}s", parts.join("; ")))
}

fn competitiveness(rep: &Report) -> Outcome {
    let ratios: Vec<f64> = laps_runs(&rep.summary).filter_map(|r| r["ratio"].as_f64()).collect();
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    outcome(
        ratios.len() >= 100 && max <= 972.0,
        format!("{} instances, max LAPS/oracle ratio {max:.4} (bound 972)", ratios.len()),
    )
}

fn engine_exactness(suites: &[&Report], lemma: &Lemma3Check) -> Outcome {
    let mut sims = 0;
    let mut bad = 0;
    for rep in suites {
        for inst in rep.summary["instances"].as_array().into_iter().flatten() {
            for r in inst["runs"].as_array().into_iter().flatten() {
                sims += 1;
                if r["invariants_ok"] != Value::Bool(true) {
                    bad += 1;
                }
            }
        }
    }
    sims += lemma.traces_checked;
    bad += lemma.trace_violations;
    let power = PowerFunction::polynomial(3.0).unwrap();
    let inst = Instance::from_releases(vec![(0.0, JobSize::Finite(1.0))]).unwrap();
    let laps = Policy::laps(1.0, 0.5, 3.0).unwrap();
    let trace = simulate(&inst, &laps, &power, &Options::default()).unwrap();
    let c = trace.cost(None);
    let close = |x: f64, want: f64| (x - want).abs() <= 1e-9 * want;
    let anchor = close(c.total_flow, 0.5) && close(c.total_energy, 4.0) && close(c.total, 4.5);
    bad += usize::from(!trace.check_invariants().is_empty());
    sims += 1;
    outcome(
        bad == 0 && anchor,
        format!(
            "{sims} simulations, {bad} invariant violations; anchor flow {} energy {} total {}",
            c.total_flow, c.total_energy, c.total
        ),
    )
}

struct Lemma3Check {
    result: Outcome,
    traces_checked: usize,
    trace_violations: usize,
}

fn lemma3() -> Lemma3Check {
    let start = Instant::now();
    let power = PowerFunction::polynomial(3.0).unwrap();
    let params = Lemma3Params::new(2.0, 1.0, power).unwrap();
    let laps = Policy::laps(1.0, 1.0 / 6.0, 3.0).unwrap();
    let out = match run_lemma3(&params, &laps, &Options::default()) {
        Ok(o) => o,
        Err(e) => {
            return Lemma3Check { result: outcome(false, format!("adversary failed: {e}")), traces_checked: 0, trace_violations: 0 }
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    let n = params.n();
    let mut violations = usize::from(!out.alg_trace.check_invariants().is_empty());
    let mut checked = 1;
    let legal_sizes = out
        .record
        .sizes
        .iter()
        .all(|&(id, p)| p >= out.record.processed.iter().find(|q| q.0 == id).map_or(0.0, |q| q.1));
    let mut ok = out.alg_trace.completed_all() && legal_sizes && out.record.sizes.len() as u64 == n && elapsed <= 10.0;
    let mut detail = format!("n={n}, branch {:?}, T={:.6}, G(T)={:.6}", out.record.branch, out.record.time, out.record.cost);
    match (out.record.branch, &out.opt_trace) {
        (Branch::Lagging, Some(opt)) => {
            checked += 1;
            violations += usize::from(!opt.check_invariants().is_empty());
            let cost = opt.cost(None).total;
            let eps = params.epsilon;
            let small: Vec<_> = opt.jobs.iter().filter(|j| j.id.0 > n).collect();
            let late = small
                .iter()
                .filter(|j| match j.completion {
                    Some(c) => c > j.release + eps * (1.0 + 1e-9),
                    None => true,
                })
                .count();
            ok &= violations == 0 && opt.completed_all() && cost <= 68.0 && late == 0 && small.len() as u64 == params.stream_count();
            detail += &format!(
                ", OPT cost {cost:.6} (bound 68), {} small jobs, {late} finish after the next release",
                small.len()
            );
        }
        (Branch::BigCost, _) => {
            ok &= out.record.cost >= params.k * (n as f64).powi(3) && violations == 0;
        }
        (Branch::Lagging, None) => ok = false,
    }
    detail += &format!(", {elapsed:.2}s");
    Lemma3Check { result: outcome(ok, detail), traces_checked: checked, trace_violations: violations }
}

fn pathological(theorem3: &Report) -> Outcome {
    let p = PowerFunction::pathological();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let s = 1.99 * i as f64 / 999.0;
        let f = |x: f64| p.eval(x).unwrap();
        let fd = if s >= h {
            (f(s + h) - f(s - h)) / (2.0 * h)
        } else {
            (-3.0 * f(s) + 4.0 * f(s + h) - f(s + 2.0 * h)) / (2.0 * h)
        };
        let want = f(s).powi(5);
        worst = worst.max((fd - want).abs() / want);
    }
    let mut ok = worst <= 1e-5;
    let mut parts = vec![format!("max derivative error {worst:.2e}")];
    for k in [1.0, 2.0, 4.0] {
        match (theorem3_speed(k), pathological_growth(k)) {
            (Ok(v), Ok(g)) => {
                let pv = p.eval(v).unwrap();
                let good = pv >= 16.0 * f64::powi(k, 4) && g.holds(1e-3);
                ok &= good;
                parts.push(format!("k={k}: P(v)={pv} growth {}", g.linearized_ratio.min(g.ratio)));
            }
            (Err(e), _) | (_, Err(e)) => {
                ok = false;
                parts.push(format!("k={k}: {e}"));
            }
        }
    }
    ok &= theorem3.passed;
    outcome(ok, parts.join("; "))
}

fn oracle_sanity() -> Outcome {
    let power = PowerFunction::polynomial(3.0).unwrap();
    let single = Instance::from_releases(vec![(0.0, JobSize::Finite(1.0))]).unwrap();
    let exact = single_job_opt(1.0, 3.0).unwrap().cost;
    let grid = OracleGrid::default_for(&single, &power).unwrap();
    let cost = oracle_opt(&single, &power, &grid).unwrap().cost;
    let mut ok = (cost - 1.88988).abs() <= 1e-3;
    let mut worst = f64::NEG_INFINITY;
    let mut cases = vec![single];
    cases.extend((0..8).map(|s| random_instance(900 + s, 3).unwrap()));
    for inst in &cases {
        let grid = OracleGrid::default_for(inst, &power).unwrap();
        let coarse = oracle_opt(inst, &power, &grid).unwrap().cost;
        let fine = oracle_opt(inst, &power, &grid.refine()).unwrap().cost;
        worst = worst.max(fine - coarse);
    }
    ok &= worst <= 1e-9;
    outcome(
        ok,
        format!(
            "single job {cost:.6} (closed form {exact:.6}); refinement worst change {worst:+.3e} over {} instances",
            cases.len()
        ),
    )
}

fn young() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = 0;
    for _ in 0..10_000 {
        let alpha = 1.0 + rng.gen_range(f64::EPSILON..=4.0);
        let g = rng.gen_range(0.0..=10.0);
        let h = rng.gen_range(0.0..=10.0);
        failures += usize::from(!young_check(alpha, g, h).unwrap().ok);
    }
    let mut worst_eq: f64 = 0.0;
    for i in 0..200 {
        let alpha = 1.05 + 3.95 * (i % 20) as f64 / 19.0;
        let g = 10.0 * (i / 20) as f64 / 9.0;
        let y = young_check(alpha, g, g.powf(alpha - 1.0)).unwrap();
        worst_eq = worst_eq.max((y.lhs - y.rhs).abs() / y.rhs.max(1.0));
    }
    outcome(
        failures == 0 && worst_eq <= 1e-9,
        format!("{failures} failures in 10^4 triples; equality cases max gap {worst_eq:.2e}"),
    )
}

fn determinism(dir: &Path, first: &[(&str, &Report)]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, rep) in first {
        let again = rerun(dir, name, "second");
        let a = fs::read(rep.out_dir.join("summary.json")).unwrap();
        let b = fs::read(again.out_dir.join("summary.json")).unwrap();
        let same = a == b;
        ok &= same;
        parts.push(format!("{name}: {}", if same { "identical" } else { "DIFFERENT" }));
    }
    outcome(ok, parts.join("; "))
}

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let start = Instant::now();
    let a2 = scenario(dir.path(), "suite-a2", &random_suite(2, 11));
    let a3 = scenario(dir.path(), "suite-a3", &random_suite(3, 13));
    let suite_time = start.elapsed().as_secs_f64();
    let l3 = scenario(dir.path(), "lemma3-k2", LEMMA3);
    let t3 = scenario(dir.path(), "theorem3", THEOREM3);
    let lemma = lemma3();

    let results = [
        ("potential-function conditions", potential_conditions(&[(2, &a2), (3, &a3)], suite_time)),
        ("competitive ratio below 972", competitiveness(&a3)),
        ("engine exactness", engine_exactness(&[&a2, &a3], &lemma)),
        ("lemma 3 construction", {
            let mut r = lemma.result;
            r.ok &= l3.passed;
            r
        }),
        ("pathological power function", pathological(&t3)),
        ("oracle sanity", oracle_sanity()),
        ("young's inequality", young()),
        (
            "deterministic summaries",
            determinism(
                dir.path(),
                &[("suite-a3", &a3), ("lemma3-k2", &l3), ("theorem3", &t3)],
            ),
        ),
    ];
    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        println!("{} {}: {name}: {}", if r.ok { "PASS" } else { "FAIL" }, i + 1, r.detail);
        failed += usize::from(!r.ok);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
