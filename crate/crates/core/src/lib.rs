//! Nonclairvoyant speed scaling on a single processor under the
//! flow-time-plus-energy objective: an exact event-driven simulator, the
//! LAPS policy family and baselines, a potential-function verifier, and
//! adaptive lower-bound adversaries.

pub mod adversary;
pub mod analysis;
pub mod engine;
pub mod error;
pub mod policy;
pub mod power;
pub mod workload;

pub use error::{Error, Result};
