//! Scenario files: topology, handshake runs, adversary actions and the
//! expected outcome, in TOML.
//!
//! ```toml
//! [[scenario]]
//! name = "msg3-replay"
//! seed = 11
//!
//! [[scenario.node]]
//! label = "ad1"
//! [[scenario.node]]
//! label = "ad2"
//!
//! [[scenario.run]]            # run 1, only used to capture traffic
//! initiator = "ad1"
//! responder = "ad2"
//! setup = true
//! [[scenario.run]]            # run 2
//! initiator = "ad1"
//! responder = "ad2"
//! at_ms = 100
//!
//! [[scenario.action]]
//! kind = "observe"
//! on = { msg = "msg3", run = 1 }
//! store = "old"
//! [[scenario.action]]
//! kind = "replay"
//! slot = "old"
//! on = { msg = "msg3", run = 2 }
//! patch_cookie = true
//!
//! [[scenario.expect]]
//! node = "ad2"
//! outcome = "aborted"
//! reasons = ["SealIntegrity", "PeerSignatureInvalid"]
//! ```

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::protocol::AbortReason;
use crate::ParamProfile;

use super::topology::{NodeSpec, SetupError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(rename = "scenario")]
    pub scenarios: Vec<ScenarioSpec>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, SetupError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| SetupError::new(e.to_string()))?;
        for s in &file.scenarios {
            s.validate()?;
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, SetupError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SetupError::new(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub profile: ParamProfile,
    #[serde(rename = "node")]
    pub nodes: Vec<NodeSpec>,
    #[serde(default, rename = "run")]
    pub runs: Vec<RunSpec>,
    #[serde(default, rename = "action")]
    pub script: AdversaryScript,
    #[serde(default)]
    pub leak: Vec<LeakSpec>,
    #[serde(default, rename = "expect")]
    pub expectations: Vec<NodeExpectation>,
    /// Exact number of handshakes (outside setup runs) that end
    /// established on both sides.
    #[serde(default)]
    pub established_pairs: Option<usize>,
    /// Exact number of Msg1/Msg2/Msg3 frames outside setup runs.
    #[serde(default)]
    pub frames: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub initiator: String,
    pub responder: String,
    #[serde(default)]
    pub at_ms: u64,
    /// Setup runs produce traffic for the adversary to capture and are left
    /// out of every expectation.
    #[serde(default)]
    pub setup: bool,
}

/// The adversary's actions. Each one acts on frames only; none can reach
/// into a node's state or keys.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AdversaryScript {
    pub actions: Vec<AdversaryAction>,
}

impl AdversaryScript {
    pub fn is_passive(&self) -> bool {
        self.actions.iter().all(|a| matches!(a, AdversaryAction::Observe { .. }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgKind {
    Msg1,
    Msg2,
    Msg3,
    Abort,
}

/// Selects frames as they are sent. Every given field must match; `nth`
/// (1-based) then picks one of the matching frames.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameMatch {
    #[serde(default)]
    pub msg: Option<MsgKind>,
    #[serde(default)]
    pub from: Option<String>,
    #[serde(default)]
    pub to: Option<String>,
    /// 1-based run index.
    #[serde(default)]
    pub run: Option<usize>,
    #[serde(default)]
    pub nth: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegenerateValue {
    Zero,
    One,
    PMinusOne,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum FrameEdit {
    /// XOR one byte of the raw frame, length prefix included.
    Xor { offset: usize, mask: u8 },
    /// XOR one byte of a decoded field and re-encode. Boolean fields are
    /// toggled. With `fix_cookie`, a Msg1 cookie is recomputed over the
    /// edited fields.
    FieldXor {
        field: String,
        #[serde(default)]
        offset: usize,
        #[serde(default = "one")]
        mask: u8,
        #[serde(default)]
        fix_cookie: bool,
    },
    /// Replaces the DH exponential of a Msg1 or Msg2.
    SetExponential {
        value: DegenerateValue,
        #[serde(default)]
        fix_cookie: bool,
    },
}

fn one() -> u8 {
    1
}

pub const MSG1_FIELDS: &[&str] = &["ad1_id", "ad2_id", "n_ad1", "dh_ad1", "vr", "cookie"];
pub const MSG2_FIELDS: &[&str] = &[
    "ad2_id", "ad1_id", "n_ad2", "dh_ad2", "sealed_iv", "sealed_ct", "sealed_tag", "vr", "cookie",
];
pub const MSG3_FIELDS: &[&str] = &["sealed_iv", "sealed_ct", "sealed_tag", "cookie"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MasqueradeRole {
    Initiator,
    Responder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversaryAction {
    /// Records matching frames, optionally keeping the last one in a slot.
    Observe {
        on: FrameMatch,
        #[serde(default)]
        store: Option<String>,
    },
    Drop { on: FrameMatch },
    /// Sends a stored frame, either when a frame matching `on` is sent
    /// (by default in its place) or at a fixed time.
    Replay {
        slot: String,
        #[serde(default)]
        on: Option<FrameMatch>,
        #[serde(default)]
        at_ms: Option<u64>,
        /// Destination node; defaults to the matched frame's destination.
        #[serde(default)]
        to: Option<String>,
        /// Overwrite the stored frame's cookie with the matched frame's.
        #[serde(default)]
        patch_cookie: bool,
        #[serde(default = "yes")]
        replace: bool,
    },
    Tamper { on: FrameMatch, edit: FrameEdit },
    Delay { on: FrameMatch, ms: u64 },
    /// Runs the protocol under `as_node`'s identity. Signs with the
    /// adversary's own keys unless `sign_with` names a node whose keys
    /// leaked.
    Masquerade {
        as_node: String,
        toward: String,
        role: MasqueradeRole,
        #[serde(default)]
        at_ms: u64,
        #[serde(default)]
        sign_with: Option<String>,
    },
    /// Substitutes its own exponentials in both directions and re-seals
    /// the payloads it can open.
    Mitm { initiator: String, responder: String },
    /// Sends `count` well-formed Msg1 frames under `as_node`'s identity.
    Flood {
        as_node: String,
        toward: String,
        count: usize,
        #[serde(default)]
        at_ms: u64,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakedKey {
    Device,
    Aik,
}

fn all_keys() -> Vec<LeakedKey> {
    vec![LeakedKey::Device, LeakedKey::Aik]
}

/// Long-term keys handed to the adversary before the first frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeakSpec {
    pub node: String,
    #[serde(default = "all_keys")]
    pub keys: Vec<LeakedKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Established,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionFilter {
    /// Sessions belonging to non-setup runs.
    #[default]
    Runs,
    /// Sessions created by frames the adversary injected.
    Injected,
    All,
}

/// Expected end state at one node (or `"adversary"` for the adversary's
/// own protocol sessions).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeExpectation {
    pub node: String,
    #[serde(default)]
    pub sessions: SessionFilter,
    #[serde(default)]
    pub outcome: Option<Outcome>,
    /// Allowed abort reasons for the selected sessions.
    #[serde(default)]
    pub reasons: Option<Vec<AbortReason>>,
    /// Each listed reason must appear among the node's refused frames.
    #[serde(default)]
    pub rejections: Option<Vec<AbortReason>>,
    #[serde(default)]
    pub half_open_peak: Option<usize>,
}

impl ScenarioSpec {
    pub fn node_labels(&self) -> HashSet<&str> {
        self.nodes.iter().map(|n| n.label.as_str()).collect()
    }

    /// Structural checks that need no keys: labels, run indices, slots and
    /// field names.
    pub fn validate(&self) -> Result<(), SetupError> {
        let err = |m: String| Err(SetupError::new(format!("scenario `{}`: {m}", self.name)));
        let labels = self.node_labels();
        if labels.len() != self.nodes.len() {
            return err("duplicate node label".into());
        }
        let known = |l: &str| labels.contains(l);
        if self.runs.is_empty() && !self.script.actions.iter().any(|a| {
            matches!(
                a,
                AdversaryAction::Masquerade { role: MasqueradeRole::Initiator, .. } | AdversaryAction::Flood { .. }
            )
        }) {
            return err("no runs and no adversary-initiated traffic".into());
        }
        for (i, r) in self.runs.iter().enumerate() {
            if !known(&r.initiator) || !known(&r.responder) {
                return err(format!("run {} names an unknown node", i + 1));
            }
            if r.initiator == r.responder {
                return err(format!("run {} connects a node to itself", i + 1));
            }
        }
        let check_match = |m: &FrameMatch| -> Result<(), SetupError> {
            for l in [&m.from, &m.to].into_iter().flatten() {
                if !known(l) {
                    return Err(SetupError::new(format!("scenario `{}`: unknown node `{l}` in match", self.name)));
                }
            }
            if let Some(r) = m.run {
                if r == 0 || r > self.runs.len() {
                    return Err(SetupError::new(format!("scenario `{}`: no run {r}", self.name)));
                }
            }
            if m.nth == Some(0) {
                return Err(SetupError::new(format!("scenario `{}`: nth is 1-based", self.name)));
            }
            Ok(())
        };
        let mut slots = HashSet::new();
        let leaked_device: HashSet<&str> = self
            .leak
            .iter()
            .filter(|l| l.keys.contains(&LeakedKey::Device))
            .map(|l| l.node.as_str())
            .collect();
        for l in &self.leak {
            if !known(&l.node) {
                return err(format!("leak names unknown node `{}`", l.node));
            }
        }
        for a in &self.script.actions {
            match a {
                AdversaryAction::Observe { on, store } => {
                    check_match(on)?;
                    if let Some(s) = store {
                        slots.insert(s.as_str());
                    }
                }
                AdversaryAction::Drop { on } | AdversaryAction::Delay { on, .. } => check_match(on)?,
                AdversaryAction::Tamper { on, edit } => {
                    check_match(on)?;
                    if let FrameEdit::FieldXor { field, .. } = edit {
                        let allowed: &[&str] = match on.msg {
                            Some(MsgKind::Msg1) => MSG1_FIELDS,
                            Some(MsgKind::Msg2) => MSG2_FIELDS,
                            Some(MsgKind::Msg3) => MSG3_FIELDS,
                            _ => return err("field_xor needs on.msg to be msg1, msg2 or msg3".into()),
                        };
                        if !allowed.contains(&field.as_str()) {
                            return err(format!("unknown field `{field}`"));
                        }
                    }
                    if let FrameEdit::SetExponential { .. } = edit {
                        if !matches!(on.msg, Some(MsgKind::Msg1 | MsgKind::Msg2)) {
                            return err("set_exponential needs on.msg to be msg1 or msg2".into());
                        }
                    }
                }
                AdversaryAction::Replay { slot, on, at_ms, to, .. } => {
                    if !slots.contains(slot.as_str()) {
                        return err(format!("replay slot `{slot}` is not filled by an earlier observe"));
                    }
                    match (on, at_ms) {
                        (Some(m), None) => check_match(m)?,
                        (None, Some(_)) if to.is_some() => {}
                        (None, Some(_)) => return err("timed replay needs `to`".into()),
                        _ => return err("replay needs exactly one of `on` and `at_ms`".into()),
                    }
                    if let Some(t) = to {
                        if !known(t) {
                            return err(format!("unknown node `{t}`"));
                        }
                    }
                }
                AdversaryAction::Masquerade {
                    as_node,
                    toward,
                    sign_with,
                    ..
                } => {
                    if !known(as_node) || !known(toward) || as_node == toward {
                        return err("masquerade needs two distinct known nodes".into());
                    }
                    if let Some(k) = sign_with {
                        if !leaked_device.contains(k.as_str()) {
                            return err(format!("sign_with `{k}` but that node's device key did not leak"));
                        }
                    }
                }
                AdversaryAction::Mitm { initiator, responder } => {
                    if !known(initiator) || !known(responder) || initiator == responder {
                        return err("mitm needs two distinct known nodes".into());
                    }
                }
                AdversaryAction::Flood { as_node, toward, .. } => {
                    if !known(as_node) || !known(toward) || as_node == toward {
                        return err("flood needs two distinct known nodes".into());
                    }
                }
            }
        }
        for e in &self.expectations {
            if e.node != "adversary" && !known(&e.node) {
                return err(format!("expectation names unknown node `{}`", e.node));
            }
        }
        Ok(())
    }
}
