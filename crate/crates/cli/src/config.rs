//! Scenario files: one JSON document per experiment.
//!
//! ```json
//! {
//!   "name": "laps-vs-oracle",
//!   "power": {"kind": "polynomial", "alpha": 3.0},
//!   "policies": [{"policy": "laps_theorem1"}, {"policy": "srpt_power_jobs"}],
//!   "workload": {"kind": "random", "seed": 7, "count": 100, "max_jobs": 3},
//!   "analysis": {"verify": true, "oracle": true, "samples": 16},
//!   "output": {"dir": "out"}
//! }
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use speedscale::adversary::{theorem2_params, Lemma3Params, MAX_STREAM_JOBS};
use speedscale::analysis::oracle::{MAX_JOBS, MAX_TOTAL_WORK};
use speedscale::analysis::random_instance;
use speedscale::policy::{compose, Policy, Scheduler, SelectionRule, SpeedRule};
use speedscale::power::{PowerFunction, PowerKind};
use speedscale::workload::{batch, stream, Instance, JobSize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub power: PowerFunction,
    #[serde(default)]
    pub policies: Vec<PolicySpec>,
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Laps { delta: f64, beta: f64 },
    LapsTheorem1,
    SrptPowerJobs {
        #[serde(default = "one")]
        offset: u32,
    },
    RrPowerJobs {
        #[serde(default)]
        offset: u32,
    },
    SetfPowerJobs {
        #[serde(default)]
        offset: u32,
    },
    RrFixed { speed: f64 },
}

fn one() -> u32 {
    1
}

impl PolicySpec {
    pub fn build(&self, power: &PowerFunction) -> speedscale::Result<Policy> {
        let alpha = || {
            power.alpha().ok_or_else(|| {
                speedscale::Error::Config("LAPS needs a polynomial power function".into())
            })
        };
        match *self {
            PolicySpec::Laps { delta, beta } => Policy::laps(delta, beta, alpha()?),
            PolicySpec::LapsTheorem1 => Policy::laps_theorem1(alpha()?),
            PolicySpec::SrptPowerJobs { offset } => Policy::srpt_power_jobs(*power, offset),
            PolicySpec::RrPowerJobs { offset } => Policy::rr_power_jobs(*power, offset),
            PolicySpec::SetfPowerJobs { offset } => compose(
                SpeedRule::PowerEqualsJobs { power: *power, offset },
                SelectionRule::Setf,
                format!("setf+power=n+{offset}"),
            ),
            PolicySpec::RrFixed { speed } => Policy::rr_fixed(speed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSpec {
    /// Seeded random instances; instance `i` uses seed `seed + i`.
    Random {
        seed: u64,
        count: usize,
        #[serde(default = "four")]
        max_jobs: usize,
    },
    /// JSON or CSV instance, relative to the config file.
    File { path: PathBuf },
    Batch {
        n: usize,
        size: f64,
        #[serde(default)]
        release: f64,
    },
    Stream { start: f64, interval: f64, size: f64, count: usize },
    /// Adaptive lower-bound adversary.
    Lemma3 {
        k: f64,
        v: f64,
        #[serde(default)]
        epsilon: Option<f64>,
    },
    /// The adversary with `k = alpha^(1/3 - eps)`, `v = 1`.
    Theorem2 { eps: f64 },
    /// Growth checks of the pathological power function.
    Theorem3 { k: Vec<f64> },
}

fn four() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default)]
    pub verify: bool,
    #[serde(default)]
    pub oracle: bool,
    /// Interior samples per merged interval in the running check.
    #[serde(default = "sixteen")]
    pub samples: usize,
    /// Grid refinements applied to the default oracle grid.
    #[serde(default)]
    pub oracle_depth: u32,
}

fn sixteen() -> usize {
    16
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self { verify: false, oracle: false, samples: 16, oracle_depth: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Relative to the config file; defaults to `out/<name>`.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub traces: bool,
    /// Keep every running-condition sample in verifier reports, not only
    /// failing ones.
    #[serde(default)]
    pub all_samples: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: None, traces: true, all_samples: false }
    }
}

/// A configuration problem, located by file and field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub file: PathBuf,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}: {}", self.file.display(), self.message)
        } else {
            write!(f, "{}: {}: {}", self.file.display(), self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub max_events: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct NamedInstance {
    pub label: String,
    pub seed: Option<u64>,
    pub instance: Instance,
}

#[derive(Debug, Clone)]
pub enum Work {
    Instances(Vec<NamedInstance>),
    Lemma3(Lemma3Params),
    Theorem3(Vec<f64>),
}

/// A validated scenario, ready to run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub file: PathBuf,
    pub policies: Vec<Policy>,
    pub work: Work,
    pub out_dir: PathBuf,
    pub max_events: usize,
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<Prepared, ConfigError> {
    let err = |field: &str, message: String| ConfigError { file: path.to_path_buf(), field: field.into(), message };
    let text = std::fs::read_to_string(path).map_err(|e| err("", format!("cannot read config: {e}")))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let mut scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let field = if field == "." { String::new() } else { field };
        err(&field, e.into_inner().to_string())
    })?;
    if let (Some(seed), WorkloadSpec::Random { seed: s, .. }) = (overrides.seed, &mut scenario.workload) {
        *s = seed;
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    prepare(scenario, path, &base, overrides)
}

fn prepare(scenario: Scenario, file: &Path, base: &Path, overrides: &Overrides) -> Result<Prepared, ConfigError> {
    let err = |field: &str, message: String| ConfigError { file: file.to_path_buf(), field: field.into(), message };
    let name = &scenario.name;
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
        return Err(err("name", format!("{name:?} must be non-empty and use only letters, digits, '-', '_' or '.'")));
    }
    let power = scenario.power;
    let mut policies = Vec::new();
    for (i, spec) in scenario.policies.iter().enumerate() {
        let field = format!("policies[{i}]");
        let p = spec.build(&power).map_err(|e| err(&field, e.to_string()))?;
        p.check_power(&power).map_err(|e| err(&field, e.to_string()))?;
        if policies.iter().any(|q: &Policy| q.name() == p.name()) {
            return Err(err(&field, format!("duplicate policy {}", p.name())));
        }
        policies.push(p);
    }

    let analysis = &scenario.analysis;
    if analysis.verify && !analysis.oracle {
        return Err(err("analysis.verify", "the verifier needs a reference schedule; set analysis.oracle".into()));
    }
    if analysis.oracle && power.alpha().is_none() {
        return Err(err("analysis.oracle", "the oracle grid needs a polynomial power function".into()));
    }

    let adversarial = |field: &str| -> Result<(), ConfigError> {
        if analysis.oracle || analysis.verify {
            return Err(err(field, "adversary workloads build their own reference; disable analysis.oracle and analysis.verify".into()));
        }
        if policies.is_empty() {
            return Err(err("policies", "at least one policy is required".into()));
        }
        Ok(())
    };
    let work = match &scenario.workload {
        WorkloadSpec::Random { seed, count, max_jobs } => {
            if *max_jobs == 0 || *max_jobs > MAX_JOBS {
                return Err(err("workload.max_jobs", format!("must lie in 1..={MAX_JOBS}, got {max_jobs}")));
            }
            let instances = (0..*count)
                .map(|i| {
                    let s = seed.wrapping_add(i as u64);
                    random_instance(s, *max_jobs).map(|instance| NamedInstance {
                        label: format!("r{i:04}"),
                        seed: Some(s),
                        instance,
                    })
                })
                .collect::<speedscale::Result<Vec<_>>>()
                .map_err(|e| err("workload", e.to_string()))?;
            Work::Instances(instances)
        }
        WorkloadSpec::File { path } => {
            let full = base.join(path);
            let text = std::fs::read_to_string(&full)
                .map_err(|e| err("workload.path", format!("cannot read {}: {e}", full.display())))?;
            let parsed = if full.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")) {
                Instance::from_csv(&text)
            } else {
                Instance::from_json(&text)
            };
            let instance = parsed.map_err(|e| err("workload.path", format!("{}: {e}", full.display())))?;
            let bad = instance.validate();
            if !bad.is_empty() {
                return Err(err("workload.path", format!("{}: {}", full.display(), bad.join("; "))));
            }
            if instance.has_open_jobs() {
                return Err(err("workload.path", "static instances need every size".into()));
            }
            let label = full.file_stem().map_or("instance".into(), |s| s.to_string_lossy().into_owned());
            Work::Instances(vec![NamedInstance { label, seed: None, instance }])
        }
        WorkloadSpec::Batch { n, size, release } => {
            let instance = batch(*n, JobSize::Finite(*size), *release).map_err(|e| err("workload", e.to_string()))?;
            Work::Instances(vec![NamedInstance { label: "batch".into(), seed: None, instance }])
        }
        WorkloadSpec::Stream { start, interval, size, count } => {
            let instance = stream(*start, *interval, *size, *count).map_err(|e| err("workload", e.to_string()))?;
            Work::Instances(vec![NamedInstance { label: "stream".into(), seed: None, instance }])
        }
        WorkloadSpec::Lemma3 { k, v, epsilon } => {
            adversarial("analysis")?;
            let mut p = Lemma3Params::new(*k, *v, power).map_err(|e| err("workload", e.to_string()))?;
            if let Some(eps) = epsilon {
                p = p.with_epsilon(*eps).map_err(|e| err("workload.epsilon", e.to_string()))?;
            }
            check_stream(&p).map_err(|m| err("workload", m))?;
            Work::Lemma3(p)
        }
        WorkloadSpec::Theorem2 { eps } => {
            adversarial("analysis")?;
            let alpha = power
                .alpha()
                .ok_or_else(|| err("power", "theorem2 needs a polynomial power function".into()))?;
            let p = theorem2_params(alpha, *eps).map_err(|e| err("workload.eps", e.to_string()))?;
            check_stream(&p).map_err(|m| err("workload", m))?;
            Work::Lemma3(p)
        }
        WorkloadSpec::Theorem3 { k } => {
            if power.kind() != PowerKind::Pathological {
                return Err(err("power", "theorem3 checks need the pathological power function".into()));
            }
            if let Some(i) = k.iter().position(|&x| !(x.is_finite() && x >= 1.0)) {
                return Err(err(&format!("workload.k[{i}]"), format!("must be >= 1, got {}", k[i])));
            }
            if !policies.is_empty() {
                return Err(err("policies", "theorem3 runs no schedules; leave policies empty".into()));
            }
            Work::Theorem3(k.clone())
        }
    };
    if let Work::Instances(list) = &work {
        if policies.is_empty() {
            return Err(err("policies", "at least one policy is required".into()));
        }
        if analysis.oracle {
            for ni in list {
                let w = ni.instance.total_work();
                if ni.instance.len() > MAX_JOBS || w > MAX_TOTAL_WORK {
                    return Err(err(
                        "analysis.oracle",
                        format!(
                            "instance {} ({} jobs, work {w}) exceeds the oracle limits ({MAX_JOBS} jobs, work {MAX_TOTAL_WORK})",
                            ni.label,
                            ni.instance.len()
                        ),
                    ));
                }
            }
        }
    }

    let out_dir = match (&overrides.out, &scenario.output.dir) {
        (Some(o), _) => o.clone(),
        (None, Some(d)) => base.join(d),
        (None, None) => base.join("out").join(name),
    };
    Ok(Prepared {
        file: file.to_path_buf(),
        policies,
        work,
        out_dir,
        max_events: overrides.max_events.unwrap_or(10_000_000),
        scenario,
    })
}

fn check_stream(p: &Lemma3Params) -> Result<(), String> {
    let count = p.stream_count();
    if count > MAX_STREAM_JOBS {
        return Err(format!(
            "n = {} needs a stream of {count} small jobs, above the limit of {MAX_STREAM_JOBS}",
            p.n()
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Prepared, ConfigError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.json");
        std::fs::write(&path, text).unwrap();
        load(&path, &Overrides::default())
    }

    const BASE: &str = r#"{
        "name": "t",
        "power": {"kind": "polynomial", "alpha": 3.0},
        "policies": [{"policy": "laps_theorem1"}, {"policy": "srpt_power_jobs"}],
        "workload": {"kind": "random", "seed": 7, "count": 3, "max_jobs": 3},
        "analysis": {"verify": true, "oracle": true}
    }"#;

    #[test]
    fn parses_a_full_scenario() {
        let p = parse(BASE).unwrap();
        assert_eq!(p.policies.len(), 2);
        assert_eq!(p.policies[1].name(), "srpt+power=n+1");
        let Work::Instances(list) = &p.work else { panic!() };
        assert_eq!(list.len(), 3);
        assert_eq!(list[2].seed, Some(9));
        assert_eq!(p.scenario.analysis.samples, 16);
        assert!(p.out_dir.ends_with("out/t"));
    }

    #[test]
    fn errors_name_the_field() {
        let e = parse(&BASE.replace(r#""alpha": 3.0"#, r#""alpha": 0.5"#)).unwrap_err();
        assert_eq!(e.field, "power");
        let e = parse(&BASE.replace(r#"{"policy": "srpt_power_jobs"}"#, r#"{"policy": "laps", "delta": 2.0, "beta": 0.5}"#)).unwrap_err();
        assert_eq!(e.field, "policies[1]");
        assert!(e.to_string().contains("scenario.json: policies[1]:"));
        let e = parse(&BASE.replace(r#""count": 3"#, r#""count": "three""#)).unwrap_err();
        assert_eq!(e.field, "workload");
        assert!(e.message.contains("invalid type"), "{e}");
        let e = parse(&BASE.replace(r#""max_jobs": 3"#, r#""max_jobs": 9"#)).unwrap_err();
        assert_eq!(e.field, "workload.max_jobs");
        let e = parse(&BASE.replace(r#""oracle": true"#, r#""oracle": false"#)).unwrap_err();
        assert_eq!(e.field, "analysis.verify");
        let e = parse(&BASE.replace(r#""name": "t""#, r#""name": "t", "colour": 1"#)).unwrap_err();
        assert!(e.message.contains("colour"), "{e}");
    }

    #[test]
    fn missing_file() {
        let e = load(Path::new("/nonexistent/scenario.json"), &Overrides::default()).unwrap_err();
        assert!(e.message.contains("cannot read"));
    }

    #[test]
    fn seed_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        std::fs::write(&path, BASE).unwrap();
        let p = load(&path, &Overrides { seed: Some(100), ..Overrides::default() }).unwrap();
        let Work::Instances(list) = &p.work else { panic!() };
        assert_eq!(list[0].seed, Some(100));
    }

    #[test]
    fn laps_under_pathological_power_is_rejected() {
        let e = parse(r#"{"name":"p","power":{"kind":"pathological"},"policies":[{"policy":"laps","delta":1,"beta":0.5}],
            "workload":{"kind":"batch","n":2,"size":1}}"#).unwrap_err();
        assert_eq!(e.field, "policies[0]");
    }

    #[test]
    fn adversary_workloads() {
        let p = parse(r#"{"name":"l","power":{"kind":"polynomial","alpha":3},"policies":[{"policy":"laps","delta":1,"beta":0.16666666666666666}],
            "workload":{"kind":"lemma3","k":2,"v":1}}"#).unwrap();
        let Work::Lemma3(params) = p.work else { panic!() };
        assert_eq!(params.n(), 2);
        let e = parse(r#"{"name":"l","power":{"kind":"polynomial","alpha":3},"policies":[{"policy":"rr_fixed","speed":1}],
            "workload":{"kind":"lemma3","k":2,"v":1,"epsilon":0.5}}"#).unwrap_err();
        assert_eq!(e.field, "workload.epsilon");
        let e = parse(r#"{"name":"l","power":{"kind":"polynomial","alpha":3},"policies":[{"policy":"rr_fixed","speed":1}],
            "workload":{"kind":"theorem2","eps":0.5}}"#).unwrap_err();
        assert_eq!(e.field, "workload.eps");
        let e = parse(r#"{"name":"l","power":{"kind":"polynomial","alpha":3},
            "workload":{"kind":"theorem3","k":[1]}}"#).unwrap_err();
        assert_eq!(e.field, "power");
        let e = parse(r#"{"name":"l","power":{"kind":"pathological"},
            "workload":{"kind":"theorem3","k":[1, 0.5]}}"#).unwrap_err();
        assert_eq!(e.field, "workload.k[1]");
    }

    #[test]
    fn file_workloads_resolve_relative_to_the_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("jobs.csv"), "id,release,size\n1,0,1\n2,0.5,0.5\n").unwrap();
        let path = dir.path().join("s.json");
        std::fs::write(&path, r#"{"name":"f","power":{"kind":"polynomial","alpha":2},"policies":[{"policy":"rr_fixed","speed":1}],
            "workload":{"kind":"file","path":"jobs.csv"}}"#).unwrap();
        let p = load(&path, &Overrides::default()).unwrap();
        let Work::Instances(list) = &p.work else { panic!() };
        assert_eq!(list[0].label, "jobs");
        assert_eq!(list[0].instance.len(), 2);
        std::fs::write(&path, r#"{"name":"f","power":{"kind":"polynomial","alpha":2},"policies":[{"policy":"rr_fixed","speed":1}],
            "workload":{"kind":"file","path":"missing.json"}}"#).unwrap();
        assert_eq!(load(&path, &Overrides::default()).unwrap_err().field, "workload.path");
    }
}
