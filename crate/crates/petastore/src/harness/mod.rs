//! Deterministic scenario harness.

pub mod corpus;
pub mod metrics;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod validate;

use metrics::Report;
use scenario::{Scenario, ScenarioError};
use validate::Violation;

/// A finished run: the trace, the report computed from it and whatever the
/// validators found.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub trace: String,
    pub report: Report,
    pub violations: Vec<Violation>,
}

pub fn run(s: &Scenario) -> Result<Outcome, ScenarioError> {
    let out = sim::run_scenario(s)?;
    let events = trace::parse_trace(&out.trace).expect("simulator emits well-formed traces");
    Ok(Outcome {
        report: Report::from_trace(&events),
        violations: validate::validate_all(&events),
        trace: out.trace,
    })
}
