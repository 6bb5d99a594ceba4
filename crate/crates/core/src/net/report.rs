use std::fmt::Write as _;

use serde::Serialize;

use crate::crypto::SessionKeys;
use crate::protocol::{AbortReason, Phase, Role};

/// Where a session came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionOrigin {
    /// Created by the scripted run with this 1-based index.
    Run(usize),
    /// Created by a frame the adversary injected.
    Injected,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameRecord {
    pub index: usize,
    pub sent_ms: u64,
    pub delivered_ms: Option<u64>,
    pub from: String,
    pub to: String,
    pub msg: String,
    pub size: usize,
    pub run: Option<usize>,
    pub injected: bool,
    /// What the network did with it: delivered, dropped, tampered, ...
    pub network: String,
    /// What the receiver did with it.
    pub verdict: String,
    /// First 4 bytes of the SHA-256 of the frame as delivered.
    pub digest: String,
}

impl FrameRecord {
    pub fn trace_line(&self) -> String {
        format!(
            "{:>6}ms {:>9} -> {:<9} {:<5} {:>5}B {:<22} {} #{}",
            self.sent_ms,
            self.from,
            self.to,
            self.msg,
            self.size,
            self.network,
            if self.verdict.is_empty() { "-" } else { &self.verdict },
            self.digest
        )
    }

    pub fn is_protocol(&self) -> bool {
        matches!(self.msg.as_str(), "Msg1" | "Msg2" | "Msg3")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionReport {
    pub origin: SessionOrigin,
    pub role: Role,
    pub peer: String,
    pub phase: Phase,
    pub abort: Option<AbortReason>,
    pub peer_abort: Option<AbortReason>,
    /// First 8 bytes of the session cookie, hex.
    pub cookie: String,
    pub fingerprint: Option<String>,
    pub started_ms: u64,
    pub ended_ms: Option<u64>,
    #[serde(skip)]
    pub keys: Option<SessionKeys>,
    #[serde(skip)]
    pub(crate) full_cookie: [u8; 32],
    #[serde(skip)]
    pub(crate) peer_id: [u8; 16],
}

impl SessionReport {
    pub fn is_established(&self) -> bool {
        self.phase == Phase::Established
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Rejection {
    pub at_ms: u64,
    pub frame: usize,
    pub reason: AbortReason,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeReport {
    pub label: String,
    pub identity: String,
    pub sessions: Vec<SessionReport>,
    pub rejections: Vec<Rejection>,
    pub half_open_peak: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpectationResult {
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub profile: String,
    pub nodes: Vec<NodeReport>,
    /// Protocol sessions the adversary ran under a borrowed identity.
    pub adversary_sessions: Vec<SessionReport>,
    pub frames: Vec<FrameRecord>,
    /// Msg1/Msg2/Msg3 frames outside setup runs.
    pub protocol_frames: usize,
    /// Handshakes outside setup runs established on both sides.
    pub established_pairs: usize,
    /// Pairs established on both sides with different keys. Always zero
    /// unless the protocol is broken.
    pub mismatched_key_pairs: usize,
    /// Established sessions at honest nodes with no established partner.
    pub unmatched_established: usize,
    pub expectations: Vec<ExpectationResult>,
    pub notes: Vec<String>,
    pub passed: bool,
    pub virtual_end_ms: u64,
    pub wall_time_ms: f64,
}

impl ScenarioReport {
    pub fn node(&self, label: &str) -> Option<&NodeReport> {
        self.nodes.iter().find(|n| n.label == label)
    }

    pub fn trace_lines(&self) -> Vec<String> {
        self.frames.iter().map(FrameRecord::trace_line).collect()
    }

    /// Final state per node and per session, without timing, for
    /// comparing runs.
    pub fn outcome_lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        for n in &self.nodes {
            for s in &n.sessions {
                out.push(format!(
                    "{} {:?} {:?} peer={} {:?} {:?}",
                    n.label, s.origin, s.role, s.peer, s.phase, s.abort
                ));
            }
        }
        out
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{}: {} (frames={} pairs={} seed={})",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.protocol_frames,
            self.established_pairs,
            self.seed
        )
    }

    /// Human-readable report: sessions, rejections, trace, checks.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {} (profile {}, seed {})", self.name, self.profile, self.seed);
        for n in &self.nodes {
            let _ = writeln!(s, "  node {} [{}] half-open peak {}", n.label, &n.identity[..8], n.half_open_peak);
            for x in &n.sessions {
                let _ = writeln!(
                    s,
                    "    {:?} {:?} with {}: {:?}{}{}",
                    x.origin,
                    x.role,
                    x.peer,
                    x.phase,
                    x.abort.map(|r| format!(" reason={r}")).unwrap_or_default(),
                    x.fingerprint.as_ref().map(|f| format!(" keys={f}")).unwrap_or_default()
                );
            }
            if !n.rejections.is_empty() {
                let mut counts: Vec<(AbortReason, usize)> = Vec::new();
                for r in &n.rejections {
                    match counts.iter_mut().find(|(k, _)| *k == r.reason) {
                        Some((_, c)) => *c += 1,
                        None => counts.push((r.reason, 1)),
                    }
                }
                let list: Vec<String> = counts.iter().map(|(k, c)| format!("{k}x{c}")).collect();
                let _ = writeln!(s, "    refused frames: {}", list.join(" "));
            }
        }
        for x in &self.adversary_sessions {
            let _ = writeln!(
                s,
                "  adversary {:?} with {}: {:?}{}",
                x.role,
                x.peer,
                x.phase,
                x.abort.map(|r| format!(" reason={r}")).unwrap_or_default()
            );
        }
        let _ = writeln!(s, "  trace:");
        for line in self.trace_lines() {
            let _ = writeln!(s, "    {line}");
        }
        for n in &self.notes {
            let _ = writeln!(s, "  note: {n}");
        }
        for e in &self.expectations {
            let _ = writeln!(
                s,
                "  [{}] {}{}",
                if e.passed { "ok" } else { "FAILED" },
                e.check,
                if e.detail.is_empty() { String::new() } else { format!(": {}", e.detail) }
            );
        }
        let _ = writeln!(s, "  {}", self.summary_line());
        s
    }
}
