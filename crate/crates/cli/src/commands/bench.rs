use std::path::Path;
use std::time::Duration;

use serde_json::json;
use stcp_core::net::{bench_tcp_loopback, provision, NodeSpec};
use stcp_core::protocol::PhaseTimings;
use stcp_core::ParamProfile;

use crate::config::NodeConfigFile;
use crate::error::CliError;

/// Published handshake latencies on embedded hardware, printed for
/// comparison only.
pub const REFERENCE_FULL_MS: f64 = 4582.44;
pub const REFERENCE_REDUCED_MS: f64 = 1201.50;

pub struct BenchArgs<'a> {
    pub config: Option<&'a Path>,
    pub reps: usize,
    pub profile: Option<ParamProfile>,
    pub seed: u64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

fn phases(p: &PhaseTimings) -> serde_json::Value {
    json!({
        "dh": ms(p.dh),
        "signing": ms(p.signing),
        "attestation": ms(p.attestation),
        "sealing": ms(p.sealing),
    })
}

/// Handshakes between two freshly provisioned devices over loopback TCP.
/// The profile comes from `--profile`, else from the config.
pub fn run(args: BenchArgs) -> Result<serde_json::Value, CliError> {
    if args.reps == 0 {
        return Err(CliError::usage("--reps must be at least 1"));
    }
    let profile = match (args.profile, args.config) {
        (Some(p), _) => p,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            let file: NodeConfigFile =
                toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message())))?;
            file.profile
        }
        (None, None) => return Err(CliError::usage("give --profile full|test or a --config to take it from")),
    };
    log::info!("provisioning two {profile} devices");
    let topo = provision(profile, &[NodeSpec::honest("initiator"), NodeSpec::honest("responder")], args.seed)?;
    let report = bench_tcp_loopback(&topo.nodes[0].device, topo.nodes[1].device.clone(), args.reps, args.seed)?;
    let s = report.stats;
    let group = profile.dh_group();
    Ok(json!({
        "event": "bench",
        "profile": profile.as_str(),
        "dh_group": group.name(),
        "rsa_bits": profile.rsa_bits(),
        "aes_bits": 256,
        "repetitions": args.reps,
        "latency_ms": { "min": ms(s.min), "median": ms(s.median), "mean": ms(s.mean), "max": ms(s.max) },
        "initiator_phases_ms": phases(&report.phases),
        "responder_phases_ms": phases(&report.responder_phases),
        "reference_ms": { "full": REFERENCE_FULL_MS, "reduced": REFERENCE_REDUCED_MS },
    }))
}
