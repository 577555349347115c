//! Event-driven continuous-time simulation.
//!
//! Between events every quantity of interest is linear in time, so the
//! engine advances interval by interval with closed-form updates and never
//! discretizes time.

mod sim;
mod trace;

pub use sim::{next_event, simulate, simulate_adaptive, Options, StepJob, StepState, COMPLETION_TOL};
pub use trace::{
    CostSummary, Event, EventKind, Interval, IntervalJob, JobRecord, JobSnapshot, Snapshot, Trace,
};
