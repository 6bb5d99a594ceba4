//! Deterministic in-memory network with a scripted adversary.
//!
//! Time is virtual (milliseconds). Every frame takes one millisecond to
//! cross the link unless delayed. Each node and the adversary draw from
//! their own ChaCha stream of the run seed, so a (topology, scenario, seed)
//! triple always yields the same trace.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::time::Instant;

use num_bigint::BigUint;
use num_traits::One;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::crypto::{
    compute_shared_secret, derive_session_keys, generate_dh_keypair, hash, open, seal, DhGroup, DhKeyPair, Nonce,
    SessionKeys,
};
use crate::protocol::{
    decode, encode, initiator_wins, AbortFrame, AbortReason, AttestationPolicy, DeviceIdentity, HalfOpenEntry,
    HalfOpenSessions, HandshakeState, LocalDevice, Msg1, PeerRegistry, Phase, ProtocolMessage, QuoteSource, Role,
    SessionCookie, MESSAGE_TIMEOUT,
};
use crate::tpm::PcrBank;

use super::report::*;
use super::script::*;
use super::topology::{provision, ProvisionedTopology, SetupError};

pub const LINK_LATENCY_MS: u64 = 1;
/// Hard stop for the virtual clock.
const HORIZON_MS: u64 = 3_600_000;

fn timeout_ms() -> u64 {
    MESSAGE_TIMEOUT.as_millis() as u64
}

/// Validates the scenario and provisions its nodes from its seed.
pub fn provision_scenario(spec: &ScenarioSpec) -> Result<ProvisionedTopology, SetupError> {
    spec.validate()?;
    provision(spec.profile, &spec.nodes, spec.seed)
}

/// Runs a scenario with its own seed.
pub fn run_scenario(topology: &ProvisionedTopology, spec: &ScenarioSpec) -> Result<ScenarioReport, SetupError> {
    run_scenario_seeded(topology, spec, spec.seed)
}

/// Runs a scenario on an already provisioned topology with `seed` driving
/// all handshake randomness.
pub fn run_scenario_seeded(
    topology: &ProvisionedTopology,
    spec: &ScenarioSpec,
    seed: u64,
) -> Result<ScenarioReport, SetupError> {
    spec.validate()?;
    let labels: Vec<&str> = topology.nodes.iter().map(|n| n.label.as_str()).collect();
    let wanted: Vec<&str> = spec.nodes.iter().map(|n| n.label.as_str()).collect();
    if labels != wanted {
        return Err(SetupError::new(format!(
            "scenario `{}` expects nodes {wanted:?}, topology has {labels:?}",
            spec.name
        )));
    }
    let wall = Instant::now();
    let mut sim = Sim::new(topology, spec, seed)?;
    sim.run();
    Ok(sim.finish(wall))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    StartRun(usize),
    Deliver(usize),
    Timeout { node: usize, slot: usize, phase: Phase },
    Trigger(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    time: u64,
    seq: u64,
    kind: EventKind,
}

struct Slot {
    state: HandshakeState,
    origin: SessionOrigin,
    started: u64,
    ended: Option<u64>,
}

struct HalfOpenRef {
    cookie: SessionCookie,
    slot: usize,
}

impl HalfOpenEntry for HalfOpenRef {
    fn cookie(&self) -> SessionCookie {
        self.cookie
    }

    fn evict(&mut self) {}
}

struct NodeRt {
    label: String,
    device: LocalDevice,
    rng: ChaCha20Rng,
    slots: Vec<Slot>,
    half_open: HalfOpenSessions<HalfOpenRef>,
    rejections: Vec<Rejection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sender {
    Node(usize),
    Adversary,
}

struct Endpoint {
    action: usize,
    device: LocalDevice,
    role: MasqueradeRole,
    as_node: usize,
    target: usize,
    at_ms: u64,
    /// Indices into `Adversary::sessions`.
    sessions: Vec<usize>,
}

struct MitmSession {
    c1: SessionCookie,
    c2: SessionCookie,
    x: DhKeyPair,
    y: DhKeyPair,
    n_ad1: Nonce,
    dh_ad1: Vec<u8>,
    toward_responder: Option<SessionKeys>,
    toward_initiator: Option<SessionKeys>,
}

struct Mitm {
    initiator: usize,
    responder: usize,
    sessions: Vec<MitmSession>,
}

struct Adversary {
    rng: ChaCha20Rng,
    slots: HashMap<String, Vec<u8>>,
    counters: Vec<usize>,
    endpoints: Vec<Endpoint>,
    mitm: Vec<Mitm>,
    flood_cookies: HashSet<SessionCookie>,
    sessions: Vec<Slot>,
}

struct Outgoing {
    sender: Sender,
    to: DeviceIdentity,
    bytes: Vec<u8>,
    note: &'static str,
}

struct Sim<'a> {
    topo: &'a ProvisionedTopology,
    spec: &'a ScenarioSpec,
    seed: u64,
    group: DhGroup,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<Event>>,
    nodes: Vec<NodeRt>,
    by_identity: HashMap<DeviceIdentity, usize>,
    adversary: Adversary,
    frames: Vec<FrameRecord>,
    frame_bytes: Vec<Vec<u8>>,
    frame_dest: Vec<Option<usize>>,
    cookie_runs: HashMap<SessionCookie, usize>,
    notes: Vec<String>,
}

fn msg_name(m: Option<&ProtocolMessage>) -> &'static str {
    match m {
        Some(ProtocolMessage::Msg1(_)) => "Msg1",
        Some(ProtocolMessage::Msg2(_)) => "Msg2",
        Some(ProtocolMessage::Msg3(_)) => "Msg3",
        Some(ProtocolMessage::Abort(_)) => "Abort",
        None => "?",
    }
}

fn kind_of(m: &ProtocolMessage) -> MsgKind {
    match m {
        ProtocolMessage::Msg1(_) => MsgKind::Msg1,
        ProtocolMessage::Msg2(_) => MsgKind::Msg2,
        ProtocolMessage::Msg3(_) => MsgKind::Msg3,
        ProtocolMessage::Abort(_) => MsgKind::Abort,
    }
}

fn xor_at(buf: &mut [u8], offset: usize, mask: u8) {
    if !buf.is_empty() {
        let i = offset % buf.len();
        buf[i] ^= mask;
    }
}

fn degenerate(group: &DhGroup, v: DegenerateValue) -> Vec<u8> {
    let value = match v {
        DegenerateValue::Zero => BigUint::default(),
        DegenerateValue::One => BigUint::one(),
        DegenerateValue::PMinusOne => group.modulus() - BigUint::one(),
    };
    group.encode(&value)
}

fn refresh_cookie(m: &mut Msg1) {
    m.cookie = SessionCookie::compute(&m.dh_ad1, &m.n_ad1, &m.ad1_id, &m.ad2_id);
}

fn apply_edit(edit: &FrameEdit, bytes: &[u8], group: &DhGroup) -> Vec<u8> {
    match edit {
        FrameEdit::Xor { offset, mask } => {
            let mut b = bytes.to_vec();
            if *offset < b.len() {
                b[*offset] ^= mask;
            }
            b
        }
        FrameEdit::FieldXor {
            field,
            offset,
            mask,
            fix_cookie,
        } => {
            let Ok(mut msg) = decode(bytes) else {
                return bytes.to_vec();
            };
            let (o, k) = (*offset, *mask);
            match &mut msg {
                ProtocolMessage::Msg1(m) => {
                    match field.as_str() {
                        "ad1_id" => xor_at(&mut m.ad1_id.0, o, k),
                        "ad2_id" => xor_at(&mut m.ad2_id.0, o, k),
                        "n_ad1" => xor_at(&mut m.n_ad1.0, o, k),
                        "dh_ad1" => xor_at(&mut m.dh_ad1, o, k),
                        "vr" => m.validation_request = !m.validation_request,
                        "cookie" => xor_at(&mut m.cookie.0, o, k),
                        _ => {}
                    }
                    if *fix_cookie {
                        refresh_cookie(m);
                    }
                }
                ProtocolMessage::Msg2(m) => match field.as_str() {
                    "ad2_id" => xor_at(&mut m.ad2_id.0, o, k),
                    "ad1_id" => xor_at(&mut m.ad1_id.0, o, k),
                    "n_ad2" => xor_at(&mut m.n_ad2.0, o, k),
                    "dh_ad2" => xor_at(&mut m.dh_ad2, o, k),
                    "sealed_iv" => xor_at(&mut m.sealed_auth.iv, o, k),
                    "sealed_ct" => xor_at(&mut m.sealed_auth.ciphertext, o, k),
                    "sealed_tag" => xor_at(&mut m.sealed_auth.tag, o, k),
                    "vr" => m.validation_request = !m.validation_request,
                    "cookie" => xor_at(&mut m.cookie.0, o, k),
                    _ => {}
                },
                ProtocolMessage::Msg3(m) => match field.as_str() {
                    "sealed_iv" => xor_at(&mut m.sealed_auth.iv, o, k),
                    "sealed_ct" => xor_at(&mut m.sealed_auth.ciphertext, o, k),
                    "sealed_tag" => xor_at(&mut m.sealed_auth.tag, o, k),
                    "cookie" => xor_at(&mut m.cookie.0, o, k),
                    _ => {}
                },
                ProtocolMessage::Abort(_) => {}
            }
            encode(&msg)
        }
        FrameEdit::SetExponential { value, fix_cookie } => {
            let Ok(mut msg) = decode(bytes) else {
                return bytes.to_vec();
            };
            match &mut msg {
                ProtocolMessage::Msg1(m) => {
                    m.dh_ad1 = degenerate(group, *value);
                    if *fix_cookie {
                        refresh_cookie(m);
                    }
                }
                ProtocolMessage::Msg2(m) => m.dh_ad2 = degenerate(group, *value),
                _ => {}
            }
            encode(&msg)
        }
    }
}

fn patch_cookie(bytes: &[u8], cookie: SessionCookie) -> Vec<u8> {
    match decode(bytes) {
        Ok(mut m) => {
            *m.cookie_mut() = cookie;
            encode(&m)
        }
        Err(_) => bytes.to_vec(),
    }
}

impl<'a> Sim<'a> {
    fn new(topo: &'a ProvisionedTopology, spec: &'a ScenarioSpec, seed: u64) -> Result<Self, SetupError> {
        let stream = |s: u64| {
            let mut r = ChaCha20Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        let nodes: Vec<NodeRt> = topo
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| NodeRt {
                label: n.label.clone(),
                device: n.device.clone(),
                rng: stream(i as u64 + 1),
                slots: Vec::new(),
                half_open: HalfOpenSessions::new(n.half_open_cap),
                rejections: Vec::new(),
            })
            .collect();
        let by_identity = nodes.iter().enumerate().map(|(i, n)| (n.device.identity, i)).collect();
        let mut sim = Sim {
            topo,
            spec,
            seed,
            group: topo.profile.dh_group(),
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            nodes,
            by_identity,
            adversary: Adversary {
                rng: stream(0),
                slots: HashMap::new(),
                counters: vec![0; spec.script.actions.len()],
                endpoints: Vec::new(),
                mitm: Vec::new(),
                flood_cookies: HashSet::new(),
                sessions: Vec::new(),
            },
            frames: Vec::new(),
            frame_bytes: Vec::new(),
            frame_dest: Vec::new(),
            cookie_runs: HashMap::new(),
            notes: Vec::new(),
        };
        for (i, run) in spec.runs.iter().enumerate() {
            sim.schedule(run.at_ms, EventKind::StartRun(i));
        }
        for (ai, action) in spec.script.actions.iter().enumerate() {
            match action {
                AdversaryAction::Masquerade {
                    as_node,
                    toward,
                    role,
                    at_ms,
                    sign_with,
                } => {
                    let endpoint = sim.build_endpoint(ai, as_node, toward, *role, *at_ms, sign_with.as_deref())?;
                    if *role == MasqueradeRole::Initiator {
                        sim.schedule(*at_ms, EventKind::Trigger(ai));
                    }
                    sim.adversary.endpoints.push(endpoint);
                }
                AdversaryAction::Mitm { initiator, responder } => {
                    let idx = |l: &str| topo.index_of(l).expect("validated");
                    sim.adversary.mitm.push(Mitm {
                        initiator: idx(initiator),
                        responder: idx(responder),
                        sessions: Vec::new(),
                    });
                }
                AdversaryAction::Flood { at_ms, .. } => sim.schedule(*at_ms, EventKind::Trigger(ai)),
                AdversaryAction::Replay { at_ms: Some(t), .. } => sim.schedule(*t, EventKind::Trigger(ai)),
                _ => {}
            }
        }
        Ok(sim)
    }

    fn build_endpoint(
        &self,
        action: usize,
        as_node: &str,
        toward: &str,
        role: MasqueradeRole,
        at_ms: u64,
        sign_with: Option<&str>,
    ) -> Result<Endpoint, SetupError> {
        let as_idx = self.topo.index_of(as_node).expect("validated");
        let target = self.topo.index_of(toward).expect("validated");
        let impersonated = &self.topo.nodes[as_idx];
        let (signing, aik) = match sign_with {
            Some(label) => {
                let leaked = self.topo.node(label).expect("validated");
                let aik_leaked = self
                    .spec
                    .leak
                    .iter()
                    .any(|l| l.node == label && l.keys.contains(&LeakedKey::Aik));
                (
                    leaked.device.signing_key.clone(),
                    if aik_leaked { leaked.aik() } else { self.topo.adversary_aik.clone() },
                )
            }
            None => (self.topo.adversary_signing.clone(), self.topo.adversary_aik.clone()),
        };
        let mut tpm = PcrBank::new(aik);
        tpm.boot(&impersonated.reference_manifest)
            .map_err(|e| SetupError::new(e.to_string()))?;
        let target_id = self.topo.nodes[target].device.identity;
        let record = impersonated
            .device
            .registry
            .get(&target_id)
            .cloned()
            .ok_or_else(|| SetupError::new(format!("`{as_node}` has no registry entry for `{toward}`")))?;
        let mut registry = PeerRegistry::new();
        registry.insert(record).map_err(|e| SetupError::new(e.to_string()))?;
        Ok(Endpoint {
            action,
            device: LocalDevice {
                identity: impersonated.device.identity,
                name: "adversary".into(),
                signing_key: signing,
                tpm,
                registry,
                group: self.group.clone(),
                policy: AttestationPolicy {
                    request_peer_attestation: true,
                    require_peer_attestation: false,
                },
                quote_source: QuoteSource::Live,
            },
            role,
            as_node: as_idx,
            target,
            at_ms,
            sessions: Vec::new(),
        })
    }

    fn schedule(&mut self, time: u64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(Event {
            time,
            seq: self.seq,
            kind,
        }));
    }

    fn label_of(&self, id: &DeviceIdentity) -> String {
        match self.by_identity.get(id) {
            Some(&i) => self.nodes[i].label.clone(),
            None => format!("?{}", &id.to_hex()[..6]),
        }
    }

    fn run(&mut self) {
        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.time > HORIZON_MS {
                self.notes.push("virtual clock horizon reached".into());
                break;
            }
            self.now = ev.time;
            match ev.kind {
                EventKind::StartRun(r) => self.start_run(r),
                EventKind::Deliver(f) => self.deliver(f),
                EventKind::Timeout { node, slot, phase } => self.on_timeout(node, slot, phase),
                EventKind::Trigger(a) => self.trigger(a),
            }
        }
    }

    fn start_run(&mut self, r: usize) {
        let run = &self.spec.runs[r];
        let i = self.topo.index_of(&run.initiator).expect("validated");
        let peer = self.topo.nodes[self.topo.index_of(&run.responder).expect("validated")]
            .device
            .identity;
        let node = &mut self.nodes[i];
        match HandshakeState::initiate(&node.device, peer, &mut node.rng) {
            Ok((state, msg1)) => {
                self.cookie_runs.insert(msg1.cookie, r + 1);
                let slot = self.push_slot(i, state, SessionOrigin::Run(r + 1));
                self.schedule(self.now + timeout_ms(), EventKind::Timeout {
                    node: i,
                    slot,
                    phase: Phase::AwaitMsg2,
                });
                self.send(Sender::Node(i), peer, encode(&ProtocolMessage::Msg1(msg1)), "");
            }
            Err(e) => self.notes.push(format!("run {} could not start: {e}", r + 1)),
        }
    }

    fn push_slot(&mut self, node: usize, state: HandshakeState, origin: SessionOrigin) -> usize {
        let slots = &mut self.nodes[node].slots;
        slots.push(Slot {
            state,
            origin,
            started: self.now,
            ended: None,
        });
        slots.len() - 1
    }

    fn send_abort(&mut self, sender: Sender, to: DeviceIdentity, reason: AbortReason, cookie: SessionCookie) {
        let bytes = encode(&ProtocolMessage::Abort(AbortFrame { reason, cookie }));
        self.send(sender, to, bytes, "");
    }

    /// Puts a frame on the network. Frames from nodes pass the adversary
    /// first; adversary frames go straight to their destination.
    fn send(&mut self, sender: Sender, to: DeviceIdentity, bytes: Vec<u8>, note: &'static str) {
        let decoded = decode(&bytes).ok();
        let dest = self.by_identity.get(&to).copied();
        let index = self.frames.len();
        let run = decoded.as_ref().and_then(|m| self.cookie_runs.get(m.cookie()).copied());
        let from = match sender {
            Sender::Node(i) => self.nodes[i].label.clone(),
            Sender::Adversary => "adversary".into(),
        };
        self.frames.push(FrameRecord {
            index,
            sent_ms: self.now,
            delivered_ms: None,
            from,
            to: self.label_of(&to),
            msg: msg_name(decoded.as_ref()).into(),
            size: bytes.len(),
            run,
            injected: sender == Sender::Adversary,
            network: String::new(),
            verdict: String::new(),
            digest: hex::encode(&hash(&bytes).0[..4]),
        });
        self.frame_bytes.push(bytes);
        self.frame_dest.push(dest);

        let mut delay = 0;
        let mut notes: Vec<&str> = Vec::new();
        let mut dropped = false;
        if let Sender::Node(src) = sender {
            let mut outgoing = Vec::new();
            if let Some(msg) = &decoded {
                if self.intercept(src, dest, msg, &mut outgoing) {
                    notes.push("intercepted");
                    dropped = true;
                }
            }
            if !dropped {
                let (edited, d, drop, n) = self.apply_script(index, src, dest, decoded.as_ref(), &mut outgoing);
                self.frame_bytes[index] = edited;
                delay = d;
                dropped = drop;
                notes.extend(n);
            }
            if notes.is_empty() {
                notes.push("delivered");
            }
            self.frames[index].network = notes.join("+");
            self.frames[index].size = self.frame_bytes[index].len();
            self.frames[index].digest = hex::encode(&hash(&self.frame_bytes[index]).0[..4]);
            if !dropped {
                self.schedule_delivery(index, delay);
            }
            for o in outgoing {
                self.send(o.sender, o.to, o.bytes, o.note);
            }
        } else {
            self.frames[index].network = if note.is_empty() { "injected".into() } else { note.into() };
            self.schedule_delivery(index, 0);
        }
    }

    fn schedule_delivery(&mut self, index: usize, delay: u64) {
        match self.frame_dest[index] {
            Some(_) => {
                let at = self.now + LINK_LATENCY_MS + delay;
                self.frames[index].delivered_ms = Some(at);
                self.schedule(at, EventKind::Deliver(index));
            }
            None => self.frames[index].verdict = "undeliverable".into(),
        }
    }

    fn frame_matches(&mut self, action: usize, on: &FrameMatch, src: usize, dest: Option<usize>, kind: Option<MsgKind>, run: Option<usize>) -> bool {
        if let Some(k) = on.msg {
            if kind != Some(k) {
                return false;
            }
        }
        if let Some(f) = &on.from {
            if &self.nodes[src].label != f {
                return false;
            }
        }
        if let Some(t) = &on.to {
            if dest.map(|d| &self.nodes[d].label) != Some(t) {
                return false;
            }
        }
        if let Some(r) = on.run {
            if run != Some(r) {
                return false;
            }
        }
        self.adversary.counters[action] += 1;
        match on.nth {
            Some(n) => self.adversary.counters[action] == n,
            None => true,
        }
    }

    #[allow(clippy::type_complexity)]
    fn apply_script(
        &mut self,
        index: usize,
        src: usize,
        dest: Option<usize>,
        decoded: Option<&ProtocolMessage>,
        outgoing: &mut Vec<Outgoing>,
    ) -> (Vec<u8>, u64, bool, Vec<&'static str>) {
        let mut bytes = self.frame_bytes[index].clone();
        let mut delay = 0;
        let mut dropped = false;
        let mut notes = Vec::new();
        let kind = decoded.map(kind_of);
        let run = self.frames[index].run;
        let original_to = dest.map(|d| self.nodes[d].device.identity);
        let spec = self.spec;
        for (ai, action) in spec.script.actions.iter().enumerate() {
            let on = match action {
                AdversaryAction::Observe { on, .. }
                | AdversaryAction::Drop { on }
                | AdversaryAction::Tamper { on, .. }
                | AdversaryAction::Delay { on, .. } => on,
                AdversaryAction::Replay { on: Some(on), .. } => on,
                _ => continue,
            };
            if !self.frame_matches(ai, on, src, dest, kind, run) {
                continue;
            }
            match action {
                AdversaryAction::Observe { store, .. } => {
                    if let Some(s) = store {
                        self.adversary.slots.insert(s.clone(), bytes.clone());
                    }
                    notes.push("observed");
                }
                AdversaryAction::Drop { .. } => {
                    dropped = true;
                    notes.push("dropped");
                }
                AdversaryAction::Tamper { edit, .. } => {
                    let edited = apply_edit(edit, &bytes, &self.group);
                    notes.push(if edited == bytes { "tampered(no-op)" } else { "tampered" });
                    bytes = edited;
                }
                AdversaryAction::Delay { ms, .. } => {
                    delay += ms;
                    notes.push("delayed");
                }
                AdversaryAction::Replay {
                    slot,
                    to,
                    patch_cookie: patch,
                    replace,
                    ..
                } => {
                    let Some(stored) = self.adversary.slots.get(slot).cloned() else {
                        self.notes.push(format!("replay slot `{slot}` empty at {}ms", self.now));
                        continue;
                    };
                    let stored = match (patch, decoded) {
                        (true, Some(m)) => patch_cookie(&stored, *m.cookie()),
                        _ => stored,
                    };
                    let target = match to {
                        Some(l) => Some(self.nodes[self.topo.index_of(l).expect("validated")].device.identity),
                        None => original_to,
                    };
                    if let Some(t) = target {
                        outgoing.push(Outgoing {
                            sender: Sender::Adversary,
                            to: t,
                            bytes: stored,
                            note: "replayed",
                        });
                    }
                    if *replace {
                        dropped = true;
                        notes.push("replaced");
                    }
                }
                _ => {}
            }
        }
        (bytes, delay, dropped, notes)
    }

    /// Adversary protocol endpoints take frames that belong to their own
    /// sessions. Returns whether the frame was consumed.
    fn intercept(&mut self, src: usize, dest: Option<usize>, msg: &ProtocolMessage, out: &mut Vec<Outgoing>) -> bool {
        let cookie = *msg.cookie();
        let now = self.now;
        let adv = &mut self.adversary;
        for e in adv.endpoints.iter_mut() {
            if e.role == MasqueradeRole::Responder {
                if let ProtocolMessage::Msg1(m) = msg {
                    if dest == Some(e.as_node) && src == e.target && now >= e.at_ms {
                        if let Ok((state, msg2)) = HandshakeState::respond(&e.device, m, &mut adv.rng) {
                            adv.sessions.push(Slot {
                                state,
                                origin: SessionOrigin::Injected,
                                started: now,
                                ended: None,
                            });
                            e.sessions.push(adv.sessions.len() - 1);
                            out.push(Outgoing {
                                sender: Sender::Adversary,
                                to: m.ad1_id,
                                bytes: encode(&ProtocolMessage::Msg2(msg2)),
                                note: "masquerade",
                            });
                        }
                        return true;
                    }
                }
            }
            let Some(&si) = e.sessions.iter().find(|&&si| adv.sessions[si].state.cookie() == cookie) else {
                continue;
            };
            let slot = &mut adv.sessions[si];
            let peer = slot.state.peer();
            let before = slot.state.phase();
            match msg {
                ProtocolMessage::Msg2(m2) => match slot.state.process_msg2(&e.device, m2, &mut adv.rng) {
                    Ok(msg3) => {
                        slot.ended = Some(now);
                        out.push(Outgoing {
                            sender: Sender::Adversary,
                            to: peer,
                            bytes: encode(&ProtocolMessage::Msg3(msg3)),
                            note: "masquerade",
                        });
                    }
                    Err(_) if slot.state.phase() == before => {}
                    Err(r) => {
                        slot.ended = Some(now);
                        out.push(Outgoing {
                            sender: Sender::Adversary,
                            to: peer,
                            bytes: encode(&ProtocolMessage::Abort(AbortFrame { reason: r, cookie })),
                            note: "masquerade",
                        });
                    }
                },
                ProtocolMessage::Msg3(m3) => {
                    let _ = slot.state.process_msg3(&e.device, m3);
                    slot.ended = Some(now);
                }
                ProtocolMessage::Abort(a) => {
                    if slot.state.abort_from_peer(a) {
                        slot.ended = Some(now);
                    }
                }
                ProtocolMessage::Msg1(_) => {}
            }
            return true;
        }

        for mitm in adv.mitm.iter_mut() {
            match msg {
                ProtocolMessage::Msg1(m) if src == mitm.initiator && dest == Some(mitm.responder) => {
                    let x = generate_dh_keypair(&self.group, &mut adv.rng);
                    let y = generate_dh_keypair(&self.group, &mut adv.rng);
                    let mut forged = m.clone();
                    forged.dh_ad1 = self.group.encode(x.public_exponential());
                    refresh_cookie(&mut forged);
                    mitm.sessions.push(MitmSession {
                        c1: m.cookie,
                        c2: forged.cookie,
                        x,
                        y,
                        n_ad1: m.n_ad1,
                        dh_ad1: m.dh_ad1.clone(),
                        toward_responder: None,
                        toward_initiator: None,
                    });
                    out.push(Outgoing {
                        sender: Sender::Adversary,
                        to: m.ad2_id,
                        bytes: encode(&ProtocolMessage::Msg1(forged)),
                        note: "mitm",
                    });
                    return true;
                }
                _ => {}
            }
            let initiator_id = self.nodes[mitm.initiator].device.identity;
            let responder_id = self.nodes[mitm.responder].device.identity;
            for s in mitm.sessions.iter_mut() {
                if cookie == s.c2 && src == mitm.responder {
                    match msg {
                        ProtocolMessage::Msg2(m2) => {
                            let relayed = (|| {
                                let dh2 = self.group.decode_public(&m2.dh_ad2).ok()?;
                                let k_r = compute_shared_secret(&s.x, &dh2, &self.group).ok()?;
                                let keys_r = derive_session_keys(&k_r, &s.n_ad1, &m2.n_ad2).ok()?;
                                let dh1 = self.group.decode_public(&s.dh_ad1).ok()?;
                                let k_i = compute_shared_secret(&s.y, &dh1, &self.group).ok()?;
                                let keys_i = derive_session_keys(&k_i, &s.n_ad1, &m2.n_ad2).ok()?;
                                let plain = open(&m2.sealed_auth, &keys_r).ok()?;
                                let mut forged = m2.clone();
                                forged.sealed_auth = seal(&plain, &keys_i, &mut adv.rng);
                                forged.dh_ad2 = self.group.encode(s.y.public_exponential());
                                forged.cookie = s.c1;
                                s.toward_responder = Some(keys_r);
                                s.toward_initiator = Some(keys_i);
                                Some(forged)
                            })();
                            if let Some(forged) = relayed {
                                out.push(Outgoing {
                                    sender: Sender::Adversary,
                                    to: initiator_id,
                                    bytes: encode(&ProtocolMessage::Msg2(forged)),
                                    note: "mitm",
                                });
                            }
                        }
                        ProtocolMessage::Abort(a) => out.push(Outgoing {
                            sender: Sender::Adversary,
                            to: initiator_id,
                            bytes: encode(&ProtocolMessage::Abort(AbortFrame {
                                reason: a.reason,
                                cookie: s.c1,
                            })),
                            note: "mitm",
                        }),
                        _ => {}
                    }
                    return true;
                }
                if cookie == s.c1 && src == mitm.initiator {
                    match msg {
                        ProtocolMessage::Msg3(m3) => {
                            if let (Some(ki), Some(kr)) = (&s.toward_initiator, &s.toward_responder) {
                                if let Ok(plain) = open(&m3.sealed_auth, ki) {
                                    let mut forged = m3.clone();
                                    forged.sealed_auth = seal(&plain, kr, &mut adv.rng);
                                    forged.cookie = s.c2;
                                    out.push(Outgoing {
                                        sender: Sender::Adversary,
                                        to: responder_id,
                                        bytes: encode(&ProtocolMessage::Msg3(forged)),
                                        note: "mitm",
                                    });
                                }
                            }
                        }
                        ProtocolMessage::Abort(a) => out.push(Outgoing {
                            sender: Sender::Adversary,
                            to: responder_id,
                            bytes: encode(&ProtocolMessage::Abort(AbortFrame {
                                reason: a.reason,
                                cookie: s.c2,
                            })),
                            note: "mitm",
                        }),
                        _ => {}
                    }
                    return true;
                }
            }
        }

        adv.flood_cookies.contains(&cookie)
    }

    fn trigger(&mut self, action: usize) {
        let spec = self.spec;
        match &spec.script.actions[action] {
            AdversaryAction::Replay { slot, to, .. } => {
                let Some(bytes) = self.adversary.slots.get(slot).cloned() else {
                    self.notes.push(format!("replay slot `{slot}` empty at {}ms", self.now));
                    return;
                };
                let to = to.as_deref().expect("validated");
                let id = self.nodes[self.topo.index_of(to).expect("validated")].device.identity;
                self.send(Sender::Adversary, id, bytes, "replayed");
            }
            AdversaryAction::Masquerade { .. } => {
                let now = self.now;
                let adv = &mut self.adversary;
                let Some(e) = adv.endpoints.iter_mut().find(|e| e.action == action) else {
                    return;
                };
                let target = self.nodes[e.target].device.identity;
                let Ok((state, msg1)) = HandshakeState::initiate(&e.device, target, &mut adv.rng) else {
                    return;
                };
                adv.sessions.push(Slot {
                    state,
                    origin: SessionOrigin::Injected,
                    started: now,
                    ended: None,
                });
                e.sessions.push(adv.sessions.len() - 1);
                self.send(Sender::Adversary, target, encode(&ProtocolMessage::Msg1(msg1)), "masquerade");
            }
            AdversaryAction::Flood {
                as_node,
                toward,
                count,
                ..
            } => {
                let claimed = self.nodes[self.topo.index_of(as_node).expect("validated")].device.identity;
                let target = self.nodes[self.topo.index_of(toward).expect("validated")].device.identity;
                for _ in 0..*count {
                    let kp = generate_dh_keypair(&self.group, &mut self.adversary.rng);
                    let mut m = Msg1 {
                        ad1_id: claimed,
                        ad2_id: target,
                        n_ad1: Nonce::random(&mut self.adversary.rng),
                        dh_ad1: self.group.encode(kp.public_exponential()),
                        validation_request: true,
                        cookie: SessionCookie([0; 32]),
                    };
                    refresh_cookie(&mut m);
                    self.adversary.flood_cookies.insert(m.cookie);
                    self.send(Sender::Adversary, target, encode(&ProtocolMessage::Msg1(m)), "flood");
                }
            }
            _ => {}
        }
    }

    fn reject(&mut self, node: usize, frame: usize, reason: AbortReason) -> String {
        self.nodes[node].rejections.push(Rejection {
            at_ms: self.now,
            frame,
            reason,
        });
        format!("refused:{reason}")
    }

    fn end_slot(&mut self, node: usize, slot: usize) {
        self.nodes[node].slots[slot].ended = Some(self.now);
    }

    fn deliver(&mut self, index: usize) {
        let node = self.frame_dest[index].expect("only addressed frames are scheduled");
        let verdict = match decode(&self.frame_bytes[index]) {
            Err(_) => self.reject(node, index, AbortReason::Malformed),
            Ok(ProtocolMessage::Msg1(m)) => self.on_msg1(node, index, m),
            Ok(ProtocolMessage::Msg2(m)) => {
                let found = self.nodes[node]
                    .slots
                    .iter()
                    .rposition(|s| s.state.role() == Role::Initiator && s.state.cookie() == m.cookie);
                match found {
                    None => self.reject(node, index, AbortReason::CookieMismatch),
                    Some(si) => {
                        let NodeRt { device, slots, rng, .. } = &mut self.nodes[node];
                        let state = &mut slots[si].state;
                        let peer = state.peer();
                        let before = state.phase();
                        match state.process_msg2(device, &m, rng) {
                            Ok(msg3) => {
                                self.end_slot(node, si);
                                self.send(Sender::Node(node), peer, encode(&ProtocolMessage::Msg3(msg3)), "");
                                "established".into()
                            }
                            Err(r) if state.phase() == before => self.reject(node, index, r),
                            Err(r) => {
                                self.end_slot(node, si);
                                self.send_abort(Sender::Node(node), peer, r, m.cookie);
                                format!("aborted:{r}")
                            }
                        }
                    }
                }
            }
            Ok(ProtocolMessage::Msg3(m)) => match self.nodes[node].half_open.take(&m.cookie) {
                None => self.reject(node, index, AbortReason::CookieMismatch),
                Some(h) => {
                    let NodeRt { device, slots, .. } = &mut self.nodes[node];
                    let state = &mut slots[h.slot].state;
                    let peer = state.peer();
                    match state.process_msg3(device, &m) {
                        Ok(()) => {
                            self.end_slot(node, h.slot);
                            "established".into()
                        }
                        Err(r) => {
                            self.end_slot(node, h.slot);
                            self.send_abort(Sender::Node(node), peer, r, m.cookie);
                            format!("aborted:{r}")
                        }
                    }
                }
            },
            Ok(ProtocolMessage::Abort(a)) => {
                let mut hit = false;
                let now = self.now;
                let n = &mut self.nodes[node];
                for s in n.slots.iter_mut() {
                    if s.state.abort_from_peer(&a) {
                        s.ended = Some(now);
                        hit = true;
                    }
                }
                if hit {
                    n.half_open.take(&a.cookie);
                    format!("torn-down:{}", a.reason)
                } else {
                    self.reject(node, index, AbortReason::CookieMismatch)
                }
            }
        };
        self.frames[index].verdict = verdict;
    }

    fn on_msg1(&mut self, node: usize, index: usize, m: Msg1) -> String {
        if self.nodes[node].half_open.contains(&m.cookie) {
            return self.reject(node, index, AbortReason::UnexpectedMessage);
        }
        let local = self.nodes[node].device.identity;
        if m.ad2_id == local {
            let own = self.nodes[node].slots.iter().position(|s| {
                s.state.role() == Role::Initiator && s.state.phase() == Phase::AwaitMsg2 && s.state.peer() == m.ad1_id
            });
            if let Some(si) = own {
                if initiator_wins(&local, &m.ad1_id) {
                    self.send_abort(Sender::Node(node), m.ad1_id, AbortReason::Superseded, m.cookie);
                    return self.reject(node, index, AbortReason::Superseded);
                }
                let cookie = self.nodes[node].slots[si].state.cookie();
                self.nodes[node].slots[si].state.abandon(AbortReason::Superseded);
                self.end_slot(node, si);
                self.send_abort(Sender::Node(node), m.ad1_id, AbortReason::Superseded, cookie);
            }
        }
        let origin = if self.frames[index].injected {
            SessionOrigin::Injected
        } else {
            match self.cookie_runs.get(&m.cookie) {
                Some(&r) => SessionOrigin::Run(r),
                None => SessionOrigin::Injected,
            }
        };
        let n = &mut self.nodes[node];
        match HandshakeState::respond(&n.device, &m, &mut n.rng) {
            Ok((state, msg2)) => {
                let slot = self.push_slot(node, state, origin);
                let evicted = self.nodes[node].half_open.insert(HalfOpenRef { cookie: m.cookie, slot });
                if let Some(e) = evicted {
                    let st = &mut self.nodes[node].slots[e.slot].state;
                    st.abandon(AbortReason::HalfOpenEvicted);
                    let peer = st.peer();
                    self.end_slot(node, e.slot);
                    self.send_abort(Sender::Node(node), peer, AbortReason::HalfOpenEvicted, e.cookie);
                }
                self.schedule(self.now + timeout_ms(), EventKind::Timeout {
                    node,
                    slot,
                    phase: Phase::AwaitMsg3,
                });
                self.send(Sender::Node(node), m.ad1_id, encode(&ProtocolMessage::Msg2(msg2)), "");
                "accepted".into()
            }
            Err(rej) => {
                if rej.notify {
                    self.send_abort(Sender::Node(node), m.ad1_id, rej.reason, m.cookie);
                }
                self.reject(node, index, rej.reason)
            }
        }
    }

    fn on_timeout(&mut self, node: usize, slot: usize, phase: Phase) {
        let st = &mut self.nodes[node].slots[slot].state;
        if st.phase() != phase || !st.time_out() {
            return;
        }
        let (peer, cookie, role) = (st.peer(), st.cookie(), st.role());
        if role == Role::Responder {
            self.nodes[node].half_open.take(&cookie);
        }
        self.end_slot(node, slot);
        self.send_abort(Sender::Node(node), peer, AbortReason::Timeout, cookie);
    }

    fn session_report(&self, s: &Slot) -> SessionReport {
        let st = &s.state;
        let keys = st.established().map(|e| e.keys);
        SessionReport {
            origin: s.origin,
            role: st.role(),
            peer: self.label_of(&st.peer()),
            phase: st.phase(),
            abort: st.abort_reason(),
            peer_abort: st.peer_abort_reason(),
            cookie: hex::encode(&st.cookie().0[..8]),
            fingerprint: keys.as_ref().map(|k| k.fingerprint()),
            started_ms: s.started,
            ended_ms: s.ended,
            keys,
            full_cookie: st.cookie().0,
            peer_id: st.peer().0,
        }
    }

    fn finish(self, wall: Instant) -> ScenarioReport {
        let nodes: Vec<NodeReport> = self
            .nodes
            .iter()
            .map(|n| NodeReport {
                label: n.label.clone(),
                identity: n.device.identity.to_hex(),
                sessions: n.slots.iter().map(|s| self.session_report(s)).collect(),
                rejections: n.rejections.clone(),
                half_open_peak: n.half_open.peak(),
            })
            .collect();
        let adversary_sessions: Vec<SessionReport> =
            self.adversary.sessions.iter().map(|s| self.session_report(s)).collect();
        let is_setup = |run: Option<usize>| run.is_some_and(|r| self.spec.runs[r - 1].setup);
        let origin_setup = |o: SessionOrigin| matches!(o, SessionOrigin::Run(r) if self.spec.runs[r - 1].setup);

        let mut established_pairs = 0;
        let mut mismatched = 0;
        let mut partnered: HashSet<(usize, usize)> = HashSet::new();
        for (ni, n) in nodes.iter().enumerate() {
            for (si, s) in n.sessions.iter().enumerate() {
                if s.role != Role::Initiator || !s.is_established() {
                    continue;
                }
                let Some(&pi) = self.by_identity.get(&DeviceIdentity(s.peer_id)) else {
                    continue;
                };
                let my_id = self.nodes[ni].device.identity.0;
                for (pj, p) in nodes[pi].sessions.iter().enumerate() {
                    if p.role == Role::Responder
                        && p.is_established()
                        && p.full_cookie == s.full_cookie
                        && p.peer_id == my_id
                    {
                        partnered.insert((ni, si));
                        partnered.insert((pi, pj));
                        if p.keys != s.keys {
                            mismatched += 1;
                        }
                        if !origin_setup(s.origin) {
                            established_pairs += 1;
                        }
                    }
                }
            }
        }
        let unmatched_established = nodes
            .iter()
            .enumerate()
            .flat_map(|(ni, n)| n.sessions.iter().enumerate().map(move |(si, s)| (ni, si, s)))
            .filter(|(ni, si, s)| s.is_established() && !origin_setup(s.origin) && !partnered.contains(&(*ni, *si)))
            .count();
        let protocol_frames = self
            .frames
            .iter()
            .filter(|f| f.is_protocol() && !is_setup(f.run))
            .count();

        let mut report = ScenarioReport {
            name: self.spec.name.clone(),
            seed: self.seed,
            profile: self.topo.profile.to_string(),
            nodes,
            adversary_sessions,
            frames: self.frames,
            protocol_frames,
            established_pairs,
            mismatched_key_pairs: mismatched,
            unmatched_established,
            expectations: Vec::new(),
            notes: self.notes,
            passed: false,
            virtual_end_ms: self.now,
            wall_time_ms: wall.elapsed().as_secs_f64() * 1000.0,
        };
        report.expectations = evaluate(self.spec, &report);
        report.passed = report.expectations.iter().all(|e| e.passed);
        report
    }
}

fn evaluate(spec: &ScenarioSpec, r: &ScenarioReport) -> Vec<ExpectationResult> {
    let mut out = vec![ExpectationResult {
        check: "no pair established with mismatched keys".into(),
        passed: r.mismatched_key_pairs == 0,
        detail: format!("{} mismatched", r.mismatched_key_pairs),
    }];
    if let Some(n) = spec.established_pairs {
        out.push(ExpectationResult {
            check: format!("established pairs = {n}"),
            passed: r.established_pairs == n,
            detail: format!("got {}", r.established_pairs),
        });
    }
    if let Some(n) = spec.frames {
        out.push(ExpectationResult {
            check: format!("protocol frames = {n}"),
            passed: r.protocol_frames == n,
            detail: format!("got {}", r.protocol_frames),
        });
    }
    let setup = |o: SessionOrigin| matches!(o, SessionOrigin::Run(i) if spec.runs[i - 1].setup);
    for e in &spec.expectations {
        let (sessions, rejections, peak): (&[SessionReport], &[Rejection], Option<usize>) = if e.node == "adversary" {
            (&r.adversary_sessions, &[], None)
        } else {
            let n = r.node(&e.node).expect("validated");
            (&n.sessions, &n.rejections, Some(n.half_open_peak))
        };
        let selected: Vec<&SessionReport> = sessions
            .iter()
            .filter(|s| match e.sessions {
                SessionFilter::Runs => matches!(s.origin, SessionOrigin::Run(_)) && !setup(s.origin),
                SessionFilter::Injected => s.origin == SessionOrigin::Injected,
                SessionFilter::All => !setup(s.origin),
            })
            .collect();
        if e.outcome.is_some() || e.reasons.is_some() {
            let describe = |s: &SessionReport| {
                format!("{:?}{}", s.phase, s.abort.map(|a| format!("({a})")).unwrap_or_default())
            };
            let got: Vec<String> = selected.iter().map(|s| describe(s)).collect();
            let ok = !selected.is_empty()
                && selected.iter().all(|s| {
                    let outcome_ok = match e.outcome {
                        Some(Outcome::Established) => s.phase == Phase::Established,
                        Some(Outcome::Aborted) => s.phase == Phase::Aborted,
                        None => true,
                    };
                    let reason_ok = match &e.reasons {
                        Some(list) => s.abort.is_some_and(|a| list.contains(&a)),
                        None => true,
                    };
                    outcome_ok && reason_ok
                });
            let mut check = format!("{} {:?} sessions", e.node, e.sessions);
            if let Some(o) = e.outcome {
                check.push_str(&format!(" {o:?}"));
            }
            if let Some(list) = &e.reasons {
                let names: Vec<&str> = list.iter().map(|a| a.as_str()).collect();
                check.push_str(&format!(" in [{}]", names.join(", ")));
            }
            out.push(ExpectationResult {
                check,
                passed: ok,
                detail: if got.is_empty() { "no sessions".into() } else { got.join(" ") },
            });
        }
        if let Some(list) = &e.rejections {
            for reason in list {
                let count = rejections.iter().filter(|x| x.reason == *reason).count();
                out.push(ExpectationResult {
                    check: format!("{} refused a frame with {reason}", e.node),
                    passed: count > 0,
                    detail: format!("{count} times"),
                });
            }
        }
        if let Some(want) = e.half_open_peak {
            out.push(ExpectationResult {
                check: format!("{} half-open peak = {want}", e.node),
                passed: peak == Some(want),
                detail: format!("got {}", peak.map(|p| p.to_string()).unwrap_or_else(|| "n/a".into())),
            });
        }
    }
    out
}
