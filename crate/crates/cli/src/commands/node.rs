use std::net::TcpListener;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::rngs::OsRng;
use serde_json::json;
use stcp_core::net::{run_initiator, run_responder, DriverOutcome, TcpTransport};
use stcp_core::protocol::DeviceIdentity;
use stcp_core::vl::{persist, MasterSessionRecord};

use crate::config::NodeConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum NodeRole {
    Initiate,
    Listen,
}

pub struct NodeArgs<'a> {
    pub config: &'a Path,
    pub role: NodeRole,
    pub peer: Option<String>,
    pub address: Option<String>,
    pub listen: Option<String>,
}

fn choose_peer(cfg: &NodeConfig, wanted: Option<&str>) -> Result<DeviceIdentity, CliError> {
    match wanted {
        Some(s) => {
            let id: DeviceIdentity = s.parse().map_err(CliError::usage)?;
            if cfg.device.registry.get(&id).is_none() {
                return Err(CliError::new("UnknownPeer", format!("{id} is not in the peer list"), 3));
            }
            Ok(id)
        }
        None => {
            let mut it = cfg.device.registry.iter();
            match (it.next(), it.next()) {
                (Some(p), None) => Ok(p.identity),
                (None, _) => Err(CliError::config("no peers configured")),
                _ => Err(CliError::usage("several peers configured; pick one with --peer")),
            }
        }
    }
}

/// Runs one handshake over TCP, persists the master record and returns the
/// summary. Only fingerprints leave the process.
pub fn run(args: NodeArgs, emit: &mut dyn FnMut(serde_json::Value)) -> Result<serde_json::Value, CliError> {
    let cfg = NodeConfig::load(args.config)?;
    let mut rng = OsRng;
    let outcome: DriverOutcome = match args.role {
        NodeRole::Initiate => {
            let peer = choose_peer(&cfg, args.peer.as_deref())?;
            let address = args
                .address
                .or_else(|| cfg.addresses.get(&peer).cloned())
                .ok_or_else(|| CliError::config(format!("no address for peer {peer}")))?;
            log::info!("connecting to {peer} at {address}");
            let mut transport =
                TcpTransport::connect(address.as_str(), cfg.timeout).map_err(|e| match e {
                    stcp_core::net::TransportError::Timeout => {
                        CliError::new("Timeout", format!("could not reach {address}"), 3)
                    }
                    other => CliError::new("TransportError", other.to_string(), 3),
                })?;
            run_initiator(&cfg.device, &mut transport, peer, &mut rng, cfg.timeout)?
        }
        NodeRole::Listen => {
            let addr = args
                .listen
                .or_else(|| cfg.listen.clone())
                .ok_or_else(|| CliError::config("no listen address"))?;
            let listener = TcpListener::bind(&addr).map_err(|e| CliError::io(format!("bind {addr}: {e}")))?;
            let bound = listener.local_addr().map_err(|e| CliError::io(e.to_string()))?;
            emit(json!({ "event": "listening", "address": bound.to_string() }));
            let mut transport = TcpTransport::accept(&listener).map_err(|e| CliError::io(e.to_string()))?;
            run_responder(&cfg.device, &mut transport, &mut rng, cfg.timeout)?
        }
    };

    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let record = MasterSessionRecord::from_session(&outcome.session, &cfg.flight_id, now);
    persist(&record, &cfg.store_a, &cfg.store_b, &cfg.storage_key)?;
    let t = &outcome.timings;
    let ms = |d: std::time::Duration| d.as_secs_f64() * 1000.0;
    Ok(json!({
        "event": "established",
        "role": outcome.session.role,
        "profile": cfg.profile.as_str(),
        "peer": outcome.session.peer.to_hex(),
        "session": hex::encode(&outcome.session.session_id.0[..8]),
        "keys": outcome.session.keys.fingerprint(),
        "peer_verdict": outcome.peer_verdict.map(|v| format!("{v:?}")),
        "frames": outcome.frames_sent + outcome.frames_received,
        "flight_id": cfg.flight_id,
        "stored": [cfg.store_a.display().to_string(), cfg.store_b.display().to_string()],
        "phases_ms": { "dh": ms(t.dh), "signing": ms(t.signing), "attestation": ms(t.attestation), "sealing": ms(t.sealing) },
    }))
}
