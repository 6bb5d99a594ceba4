//! Many seeds of one scenario. With the `parallel` feature the seeds are
//! spread over the rayon pool; without it they run in order.

use super::report::ScenarioReport;
use super::script::ScenarioSpec;
use super::sim::run_scenario_seeded;
use super::topology::{ProvisionedTopology, SetupError};

/// Runs `spec` once per seed, in order. Reports come back in seed order.
pub fn run_batch_sequential(
    topology: &ProvisionedTopology,
    spec: &ScenarioSpec,
    seeds: &[u64],
) -> Result<Vec<ScenarioReport>, SetupError> {
    seeds.iter().map(|&s| run_scenario_seeded(topology, spec, s)).collect()
}

/// Same result as [`run_batch_sequential`], computed on the rayon pool.
#[cfg(feature = "parallel")]
pub fn run_batch(
    topology: &ProvisionedTopology,
    spec: &ScenarioSpec,
    seeds: &[u64],
) -> Result<Vec<ScenarioReport>, SetupError> {
    use rayon::prelude::*;
    seeds.par_iter().map(|&s| run_scenario_seeded(topology, spec, s)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn run_batch(
    topology: &ProvisionedTopology,
    spec: &ScenarioSpec,
    seeds: &[u64],
) -> Result<Vec<ScenarioReport>, SetupError> {
    run_batch_sequential(topology, spec, seeds)
}

/// Aggregate of a batch: how many seeds met every expectation.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct BatchSummary {
    pub scenario: String,
    pub runs: usize,
    pub passed: usize,
    pub failed_seeds: Vec<u64>,
}

impl BatchSummary {
    pub fn from_reports(reports: &[ScenarioReport]) -> Self {
        BatchSummary {
            scenario: reports.first().map(|r| r.name.clone()).unwrap_or_default(),
            runs: reports.len(),
            passed: reports.iter().filter(|r| r.passed).count(),
            failed_seeds: reports.iter().filter(|r| !r.passed).map(|r| r.seed).collect(),
        }
    }
}
