//! Job instances, deterministic generators, and the adaptive-workload
//! interface used by adversaries that react to the simulated schedule.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Job identifier. Ids are assigned in release order, so among jobs with
/// equal release times a larger id means "released later".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(pub u64);

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "j{}", self.0)
    }
}

/// Work requirement of a job. `Open` is an adversary-controlled size that
/// has not been revealed yet; an open job can never complete.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JobSize {
    Finite(f64),
    Open,
}

impl JobSize {
    pub fn finite(&self) -> Option<f64> {
        match *self {
            JobSize::Finite(w) => Some(w),
            JobSize::Open => None,
        }
    }

    pub fn is_open(&self) -> bool {
        matches!(self, JobSize::Open)
    }
}

impl fmt::Display for JobSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JobSize::Finite(w) => write!(f, "{w}"),
            JobSize::Open => f.write_str("open"),
        }
    }
}

impl Serialize for JobSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            JobSize::Finite(w) => s.serialize_f64(*w),
            JobSize::Open => s.serialize_str("open"),
        }
    }
}

impl<'de> Deserialize<'de> for JobSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(w) => Ok(JobSize::Finite(w)),
            Raw::Str(s) if s.eq_ignore_ascii_case("open") => Ok(JobSize::Open),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "job size must be a number or \"open\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub id: JobId,
    pub release: f64,
    pub size: JobSize,
}

impl JobSpec {
    fn order_key(&self) -> (f64, JobId) {
        (self.release, self.id)
    }
}

/// An ordered job sequence. Construction through the generators always
/// yields a valid instance; instances loaded from files should be checked
/// with [`Instance::validate`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Instance {
    jobs: Vec<JobSpec>,
}

impl Instance {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Wraps jobs as given, without sorting or validation.
    pub fn from_jobs(jobs: Vec<JobSpec>) -> Self {
        Self { jobs }
    }

    /// Builds an instance from `(release, size)` pairs, ordering by release
    /// (stable for ties) and assigning ids `1..`.
    pub fn from_releases(mut pairs: Vec<(f64, JobSize)>) -> Result<Self> {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let jobs = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (release, size))| JobSpec {
                id: JobId(i as u64 + 1),
                release,
                size,
            })
            .collect();
        let inst = Self { jobs };
        match inst.validate() {
            v if v.is_empty() => Ok(inst),
            v => Err(Error::InvalidParameter(v.join("; "))),
        }
    }

    pub fn jobs(&self) -> &[JobSpec] {
        &self.jobs
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn has_open_jobs(&self) -> bool {
        self.jobs.iter().any(|j| j.size.is_open())
    }

    /// Sum of finite sizes.
    pub fn total_work(&self) -> f64 {
        self.jobs.iter().filter_map(|j| j.size.finite()).sum()
    }

    pub fn get(&self, id: JobId) -> Option<&JobSpec> {
        self.jobs.iter().find(|j| j.id == id)
    }

    /// Lists every violation of the instance invariants; empty means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for (i, job) in self.jobs.iter().enumerate() {
            if !seen.insert(job.id) {
                out.push(format!("duplicate id {}", job.id));
            }
            if !(job.release.is_finite() && job.release >= 0.0) {
                out.push(format!("{}: release {} must be finite and >= 0", job.id, job.release));
            }
            if let JobSize::Finite(w) = job.size {
                if !(w.is_finite() && w > 0.0) {
                    out.push(format!("{}: size {w} must be finite and > 0", job.id));
                }
            }
            if i > 0 {
                let prev = &self.jobs[i - 1];
                if prev.order_key() >= job.order_key() {
                    out.push(format!("{} out of (release, id) order after {}", job.id, prev.id));
                } else if prev.id >= job.id {
                    out.push(format!("{} has a smaller id than earlier-released {}", job.id, prev.id));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// CSV with columns `id,release,size`; open sizes are written as `open`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "release", "size"])?;
        for j in &self.jobs {
            w.write_record([j.id.0.to_string(), j.release.to_string(), j.size.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Reads the format written by [`Instance::to_csv`]. Rows are kept in
    /// file order; call [`Instance::validate`] to check them.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["id", "release", "size"] {
            let got: Vec<_> = headers.iter().collect();
            return Err(Error::Parse(format!("expected header id,release,size, got {}", got.join(","))));
        }
        let mut jobs = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let bad = |i: usize| Error::Parse(format!("row {}: bad {} {:?}", line + 1, &headers[i], field(i)));
            let id = field(0).parse::<u64>().map_err(|_| bad(0))?;
            let release = field(1).parse::<f64>().map_err(|_| bad(1))?;
            let size = match field(2) {
                "open" => JobSize::Open,
                s => JobSize::Finite(s.parse::<f64>().map_err(|_| bad(2))?),
            };
            jobs.push(JobSpec { id: JobId(id), release, size });
        }
        Ok(Self { jobs })
    }
}

/// `n` jobs of the given size all released at `t0`, ids `1..=n`.
pub fn batch(n: usize, size: JobSize, t0: f64) -> Result<Instance> {
    if let JobSize::Finite(w) = size {
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::InvalidParameter(format!("batch job size must be > 0, got {w}")));
        }
    }
    if !(t0.is_finite() && t0 >= 0.0) {
        return Err(Error::InvalidParameter(format!("batch release must be >= 0, got {t0}")));
    }
    Instance::from_releases(vec![(t0, size); n])
}

/// `count` jobs of the given size released at `start + (i-1) * interval`.
pub fn stream(start: f64, interval: f64, size: f64, count: usize) -> Result<Instance> {
    if !(interval.is_finite() && interval > 0.0) {
        return Err(Error::InvalidParameter(format!("stream interval must be > 0, got {interval}")));
    }
    if !(size.is_finite() && size > 0.0) {
        return Err(Error::InvalidParameter(format!("stream job size must be > 0, got {size}")));
    }
    if count == 0 {
        return Err(Error::InvalidParameter("stream count must be >= 1".into()));
    }
    if !(start.is_finite() && start >= 0.0) {
        return Err(Error::InvalidParameter(format!("stream start must be >= 0, got {start}")));
    }
    Instance::from_releases(
        (0..count)
            .map(|i| (start + i as f64 * interval, JobSize::Finite(size)))
            .collect(),
    )
}

/// Union of two instances, re-sorted by release with `a`'s jobs ahead of
/// `b`'s on ties, and ids reassigned `1..`.
pub fn merge(a: &Instance, b: &Instance) -> Instance {
    let mut all: Vec<JobSpec> = a.jobs.iter().chain(b.jobs.iter()).copied().collect();
    all.sort_by(|x, y| x.release.total_cmp(&y.release));
    for (i, j) in all.iter_mut().enumerate() {
        j.id = JobId(i as u64 + 1);
    }
    Instance { jobs: all }
}

/// A condition on simulator state at which the engine must stop, split the
/// current interval, and hand control to the workload. Processed work grows
/// linearly within an interval, so crossing times are solved exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Watch {
    /// Some job's processed work reaches `work`.
    AnyJobProcessed { work: f64 },
    /// The given job's processed work reaches `work`.
    JobProcessed { id: JobId, work: f64 },
}

/// Progress of one job as seen by an adaptive workload.
#[derive(Debug, Clone, PartialEq)]
pub struct JobProgress {
    pub id: JobId,
    pub release: f64,
    pub size: JobSize,
    pub processed: f64,
    pub completed: bool,
}

/// The engine state an adaptive workload may observe: released jobs, their
/// processed work, and the schedule's accumulated cost. Nothing about the
/// policy itself is exposed.
#[derive(Debug, Clone)]
pub struct WorkloadView<'a> {
    pub now: f64,
    pub jobs: &'a [JobProgress],
    pub flow: f64,
    pub energy: f64,
    /// The watch that fired and the job that crossed it (smallest id on ties).
    pub fired: Watch,
    pub trigger: JobId,
}

impl WorkloadView<'_> {
    /// Accumulated flow time plus energy up to `now`.
    pub fn cost(&self) -> f64 {
        self.flow + self.energy
    }

    pub fn job(&self, id: JobId) -> Option<&JobProgress> {
        self.jobs.iter().find(|j| j.id == id)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Directives {
    /// Reveal sizes of open jobs.
    pub finalize: Vec<(JobId, f64)>,
    /// New jobs as `(release, size)`; releases must not be in the past nor
    /// earlier than any already known release. The engine assigns ids.
    pub release: Vec<(f64, JobSize)>,
}

/// A workload that can react to the schedule. Bound to a single run.
pub trait AdaptiveWorkload {
    fn initial_jobs(&self) -> Vec<JobSpec>;

    /// Watches currently installed. Queried at every event.
    fn watches(&self) -> Vec<Watch> {
        Vec::new()
    }

    /// Called exactly at a watch crossing.
    fn on_event(&mut self, _view: &WorkloadView<'_>) -> Result<Directives> {
        Ok(Directives::default())
    }
}

/// A fixed instance viewed as a workload that never reacts.
pub struct StaticWorkload<'a>(pub &'a Instance);

impl AdaptiveWorkload for StaticWorkload<'_> {
    fn initial_jobs(&self) -> Vec<JobSpec> {
        self.0.jobs.clone()
    }
}
