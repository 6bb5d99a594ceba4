use std::path::Path;

use serde_json::json;
use stcp_core::net::{provision_scenario, run_batch, run_scenario, BatchSummary, ScenarioFile};

use crate::error::{CliError, EXIT_SCENARIO};

pub struct AttackArgs<'a> {
    pub scenario: &'a Path,
    pub trace: bool,
    pub seeds: Option<u64>,
}

/// Runs every scenario in the file. Fails unless all of them meet their
/// declared expectations.
pub fn run(args: AttackArgs, emit: &mut dyn FnMut(serde_json::Value)) -> Result<serde_json::Value, CliError> {
    let file = ScenarioFile::load(args.scenario)?;
    let mut failed = Vec::new();
    let mut names = Vec::new();
    for spec in &file.scenarios {
        let topo = provision_scenario(spec)?;
        names.push(spec.name.clone());
        match args.seeds {
            None => {
                let report = run_scenario(&topo, spec)?;
                if args.trace {
                    eprint!("{}", report.render());
                }
                if !report.passed {
                    failed.push(spec.name.clone());
                }
                emit(json!({
                    "event": "scenario",
                    "name": report.name,
                    "passed": report.passed,
                    "seed": report.seed,
                    "established_pairs": report.established_pairs,
                    "protocol_frames": report.protocol_frames,
                    "expectations": report.expectations,
                }));
            }
            Some(n) => {
                let seeds: Vec<u64> = (0..n).map(|i| spec.seed.wrapping_add(i)).collect();
                let reports = run_batch(&topo, spec, &seeds)?;
                let summary = BatchSummary::from_reports(&reports);
                if summary.passed != summary.runs {
                    failed.push(spec.name.clone());
                    if args.trace {
                        if let Some(r) = reports.iter().find(|r| !r.passed) {
                            eprint!("{}", r.render());
                        }
                    }
                }
                emit(json!({ "event": "batch", "summary": summary }));
            }
        }
    }
    if !failed.is_empty() {
        return Err(CliError::new(
            "ScenarioFailed",
            format!("expectations not met: {}", failed.join(", ")),
            EXIT_SCENARIO,
        ));
    }
    Ok(json!({ "event": "attack", "passed": true, "scenarios": names }))
}
