use std::path::Path;

use serde_json::json;
use stcp_core::vl::{derive_vl_keys, resume, Direction, KeyNeeds, VirtualLinkId};

use crate::config::NodeConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Needs {
    Both,
    Confidentiality,
    Integrity,
}

pub struct ResumeArgs<'a> {
    pub config: &'a Path,
    pub vl: u16,
    pub direction: Direction,
    pub needs: Needs,
}

/// Rebuilds VL keys from the stored master record. Opens no socket.
pub fn run(args: ResumeArgs) -> Result<serde_json::Value, CliError> {
    let cfg = NodeConfig::load(args.config)?;
    let resumed = resume(&cfg.store_a, &cfg.store_b, &cfg.flight_id, &cfg.storage_key)?;
    for (path, fault) in &resumed.degraded {
        log::warn!("store {} unusable: {fault}", path.display());
    }
    let needs = match args.needs {
        Needs::Both => KeyNeeds::Both,
        Needs::Confidentiality => KeyNeeds::Confidentiality,
        Needs::Integrity => KeyNeeds::Integrity,
    };
    let vl = VirtualLinkId::new(args.vl, args.direction);
    let keys = derive_vl_keys(&resumed.record, vl, needs, &cfg.flight_id)?;
    Ok(json!({
        "event": "resumed",
        "peer": resumed.record.peer().to_hex(),
        "session": hex::encode(&resumed.record.session_id[..8]),
        "keys": resumed.record.fingerprint(),
        "flight_id": resumed.record.flight_id,
        "vl": args.vl,
        "dir": args.direction.as_str(),
        "vl_keys": keys.fingerprint(),
        "degraded": resumed.degraded.iter().map(|(p, f)| json!({"store": p.display().to_string(), "fault": f.to_string()})).collect::<Vec<_>>(),
        "frames": 0,
    }))
}
