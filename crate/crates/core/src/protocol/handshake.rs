use std::time::{Duration, Instant};

use rand::{CryptoRng, RngCore};
use serde::Serialize;

use crate::crypto::{
    compute_shared_secret, derive_session_keys, generate_dh_keypair, hash_parts, open, seal, Digest,
    DhKeyPair, Nonce, SessionKeys,
};
use crate::tpm::{verify_quote, Quote, TrustVerdict};

use super::device::{LocalDevice, PeerRecord, ProvisioningError};
use super::message::{AbortFrame, AbortReason, AuthPayload, Msg1, Msg2, Msg3, SessionCookie};
use super::DeviceIdentity;

/// How long either side waits for the next message before giving up.
pub const MESSAGE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Initiator,
    Responder,
}

/// Phases only move forward. `Aborted` is terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Phase {
    Start,
    AwaitMsg2,
    AwaitMsg3,
    Established,
    Aborted,
}

/// Time spent in each kind of work during one handshake, on one side.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseTimings {
    /// Exponential generation, shared secret and key derivation.
    pub dh: Duration,
    /// Device signature creation and verification.
    pub signing: Duration,
    /// Quote generation and verification.
    pub attestation: Duration,
    /// Envelope sealing and opening, payload encoding.
    pub sealing: Duration,
}

impl PhaseTimings {
    pub fn total(&self) -> Duration {
        self.dh + self.signing + self.attestation + self.sealing
    }

    pub fn add(&mut self, other: &PhaseTimings) {
        self.dh += other.dh;
        self.signing += other.signing;
        self.attestation += other.attestation;
        self.sealing += other.sealing;
    }
}

fn timed<T>(slot: &mut Duration, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *slot += start.elapsed();
    out
}

/// Why a responder refused a Msg1. `notify` says whether an abort frame
/// should go back; unknown peers and misaddressed frames are dropped
/// silently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rejected {
    pub reason: AbortReason,
    pub notify: bool,
}

/// `AD2-Data = H(AD2_i || AD1_i || g^rAD1 || g^rAD2 || N_AD1 || N_AD2)`.
pub fn responder_transcript(
    ad1: &DeviceIdentity,
    ad2: &DeviceIdentity,
    dh_ad1: &[u8],
    dh_ad2: &[u8],
    n_ad1: &Nonce,
    n_ad2: &Nonce,
) -> Digest {
    hash_parts(&[ad2.as_bytes(), ad1.as_bytes(), dh_ad1, dh_ad2, n_ad1.as_bytes(), n_ad2.as_bytes()])
}

/// `AD1-Data = H(AD1_i || AD2_i || g^rAD2 || g^rAD1 || N_AD2 || N_AD1)`.
pub fn initiator_transcript(
    ad1: &DeviceIdentity,
    ad2: &DeviceIdentity,
    dh_ad1: &[u8],
    dh_ad2: &[u8],
    n_ad1: &Nonce,
    n_ad2: &Nonce,
) -> Digest {
    hash_parts(&[ad1.as_bytes(), ad2.as_bytes(), dh_ad2, dh_ad1, n_ad2.as_bytes(), n_ad1.as_bytes()])
}

/// Tie-break for two devices initiating toward each other at once: the
/// lower identity keeps the initiator role.
pub fn initiator_wins(local: &DeviceIdentity, peer: &DeviceIdentity) -> bool {
    local < peer
}

fn concat(a: &Nonce, b: &Nonce) -> Vec<u8> {
    let mut v = Vec::with_capacity(64);
    v.extend_from_slice(a.as_bytes());
    v.extend_from_slice(b.as_bytes());
    v
}

fn verdict_reason(verdict: TrustVerdict) -> Option<AbortReason> {
    match verdict {
        TrustVerdict::Trusted => None,
        TrustVerdict::SignatureInvalid => Some(AbortReason::AttestationSignatureInvalid),
        TrustVerdict::Stale => Some(AbortReason::AttestationStale),
        TrustVerdict::StateMismatch { .. } => Some(AbortReason::AttestationStateMismatch),
    }
}

/// What a completed handshake hands to the caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EstablishedSession {
    pub session_id: SessionCookie,
    pub local: DeviceIdentity,
    pub peer: DeviceIdentity,
    pub role: Role,
    pub keys: SessionKeys,
}

/// One side of one handshake.
#[derive(Debug)]
pub struct HandshakeState {
    role: Role,
    phase: Phase,
    local: DeviceIdentity,
    peer: DeviceIdentity,
    own_nonce: Nonce,
    peer_nonce: Option<Nonce>,
    /// Held only while the initiator waits for Msg2.
    ephemeral: Option<DhKeyPair>,
    own_exponential: Vec<u8>,
    peer_exponential: Option<Vec<u8>>,
    cookie: SessionCookie,
    keys: Option<SessionKeys>,
    peer_verdict: Option<TrustVerdict>,
    abort: Option<AbortReason>,
    peer_abort: Option<AbortReason>,
    timings: PhaseTimings,
}

impl HandshakeState {
    /// Starts a session toward `peer`, returning the state (in
    /// `AwaitMsg2`) and the Msg1 to send.
    pub fn initiate<R: RngCore + CryptoRng>(
        device: &LocalDevice,
        peer: DeviceIdentity,
        rng: &mut R,
    ) -> Result<(Self, Msg1), ProvisioningError> {
        if device.registry.get(&peer).is_none() {
            return Err(ProvisioningError::UnknownPeer(peer));
        }
        let mut timings = PhaseTimings::default();
        let n_ad1 = Nonce::random(rng);
        let kp = timed(&mut timings.dh, || generate_dh_keypair(&device.group, rng));
        let dh_ad1 = device.group.encode(kp.public_exponential());
        let cookie = SessionCookie::compute(&dh_ad1, &n_ad1, &device.identity, &peer);
        let msg = Msg1 {
            ad1_id: device.identity,
            ad2_id: peer,
            n_ad1,
            dh_ad1: dh_ad1.clone(),
            validation_request: device.policy.request_peer_attestation,
            cookie,
        };
        let state = HandshakeState {
            role: Role::Initiator,
            phase: Phase::AwaitMsg2,
            local: device.identity,
            peer,
            own_nonce: n_ad1,
            peer_nonce: None,
            ephemeral: Some(kp),
            own_exponential: dh_ad1,
            peer_exponential: None,
            cookie,
            keys: None,
            peer_verdict: None,
            abort: None,
            peer_abort: None,
            timings,
        };
        Ok((state, msg))
    }

    /// Answers a Msg1. On success the state is in `AwaitMsg3`.
    pub fn respond<R: RngCore + CryptoRng>(
        device: &LocalDevice,
        msg1: &Msg1,
        rng: &mut R,
    ) -> Result<(Self, Msg2), Rejected> {
        let reject = |reason, notify| Rejected { reason, notify };
        if msg1.ad2_id != device.identity {
            return Err(reject(AbortReason::UnexpectedMessage, false));
        }
        let peer = device
            .registry
            .get(&msg1.ad1_id)
            .ok_or(reject(AbortReason::UnknownPeer, false))?;
        let expected = SessionCookie::compute(&msg1.dh_ad1, &msg1.n_ad1, &msg1.ad1_id, &msg1.ad2_id);
        if expected != msg1.cookie {
            return Err(reject(AbortReason::CookieMismatch, true));
        }
        let mut timings = PhaseTimings::default();
        let peer_public = match device.group.decode(&msg1.dh_ad1) {
            Ok(v) if device.group.is_valid_public(&v) => v,
            Ok(_) => return Err(reject(AbortReason::DegenerateExponential, true)),
            Err(_) => return Err(reject(AbortReason::Malformed, true)),
        };

        let n_ad2 = Nonce::random(rng);
        let (dh_ad2, keys) = timed(&mut timings.dh, || {
            let kp = generate_dh_keypair(&device.group, rng);
            let k_dh = compute_shared_secret(&kp, &peer_public, &device.group)
                .map_err(|_| reject(AbortReason::DegenerateExponential, true))?;
            let keys = derive_session_keys(&k_dh, &msg1.n_ad1, &n_ad2)
                .map_err(|_| reject(AbortReason::LocalFailure, true))?;
            Ok((device.group.encode(kp.public_exponential()), keys))
        })?;

        let transcript =
            responder_transcript(&msg1.ad1_id, &device.identity, &msg1.dh_ad1, &dh_ad2, &msg1.n_ad1, &n_ad2);
        let device_signature = timed(&mut timings.signing, || device.signing_key.sign(transcript.as_bytes()));
        let tpm_quote = if msg1.validation_request {
            let qd = concat(&msg1.n_ad1, &n_ad2);
            Some(
                timed(&mut timings.attestation, || device.attest(peer, &qd))
                    .map_err(|_| reject(AbortReason::LocalFailure, true))?,
            )
        } else {
            None
        };
        let sealed_auth = timed(&mut timings.sealing, || {
            let payload = AuthPayload {
                device_signature,
                tpm_quote,
            };
            seal(&payload.encode(), &keys, rng)
        });

        let msg2 = Msg2 {
            ad2_id: device.identity,
            ad1_id: msg1.ad1_id,
            n_ad2,
            dh_ad2: dh_ad2.clone(),
            sealed_auth,
            validation_request: device.policy.request_peer_attestation,
            cookie: msg1.cookie,
        };
        let state = HandshakeState {
            role: Role::Responder,
            phase: Phase::AwaitMsg3,
            local: device.identity,
            peer: msg1.ad1_id,
            own_nonce: n_ad2,
            peer_nonce: Some(msg1.n_ad1),
            ephemeral: None,
            own_exponential: dh_ad2,
            peer_exponential: Some(msg1.dh_ad1.clone()),
            cookie: msg1.cookie,
            keys: Some(keys),
            peer_verdict: None,
            abort: None,
            peer_abort: None,
            timings,
        };
        Ok((state, msg2))
    }

    fn fail(&mut self, reason: AbortReason) -> AbortReason {
        self.phase = Phase::Aborted;
        self.abort = Some(reason);
        self.ephemeral = None;
        self.keys = None;
        reason
    }

    fn peer_record<'a>(&self, device: &'a LocalDevice) -> Result<&'a PeerRecord, AbortReason> {
        device.registry.get(&self.peer).ok_or(AbortReason::UnknownPeer)
    }

    /// Checks the peer's sealed payload: signature over `transcript` and,
    /// when present or required, the quote over `qualifying_data`.
    fn check_payload(
        &mut self,
        device: &LocalDevice,
        peer: &PeerRecord,
        sealed: &crate::crypto::SealedEnvelope,
        transcript: &Digest,
        qualifying_data: &[u8],
    ) -> Result<(), AbortReason> {
        let keys = self.keys.as_ref().expect("keys derived before payload check");
        let plain = timed(&mut self.timings.sealing, || open(sealed, keys)).map_err(|_| AbortReason::SealIntegrity)?;
        let payload = AuthPayload::decode(&plain).map_err(|_| AbortReason::Malformed)?;
        let sig_ok = timed(&mut self.timings.signing, || {
            peer.device_key.verify(transcript.as_bytes(), &payload.device_signature)
        });
        if !sig_ok {
            return Err(AbortReason::PeerSignatureInvalid);
        }
        match &payload.tpm_quote {
            Some(quote) => {
                let verdict = timed(&mut self.timings.attestation, || {
                    verify_quote(quote, &peer.aik_key, qualifying_data, &peer.golden)
                });
                self.peer_verdict = Some(verdict);
                if let Some(reason) = verdict_reason(verdict) {
                    return Err(reason);
                }
            }
            None if device.policy.require_peer_attestation => return Err(AbortReason::AttestationMissing),
            None => {}
        }
        Ok(())
    }

    fn own_quote(&mut self, device: &LocalDevice, peer: &PeerRecord, qd: &[u8]) -> Result<Quote, AbortReason> {
        timed(&mut self.timings.attestation, || device.attest(peer, qd)).map_err(|_| AbortReason::LocalFailure)
    }

    fn finish(&mut self) {
        self.phase = Phase::Established;
        self.ephemeral = None;
        if let Some(k) = self.keys.as_mut() {
            k.forget_shared_secret();
        }
    }

    /// Initiator side of Msg2. A Msg2 arriving in any phase other than
    /// `AwaitMsg2` is refused with `UnexpectedMessage` and leaves the state
    /// untouched; every other failure aborts the session.
    pub fn process_msg2<R: RngCore + CryptoRng>(
        &mut self,
        device: &LocalDevice,
        msg2: &Msg2,
        rng: &mut R,
    ) -> Result<Msg3, AbortReason> {
        if self.role != Role::Initiator || self.phase != Phase::AwaitMsg2 {
            return Err(AbortReason::UnexpectedMessage);
        }
        self.process_msg2_inner(device, msg2, rng).map_err(|r| self.fail(r))
    }

    fn process_msg2_inner<R: RngCore + CryptoRng>(
        &mut self,
        device: &LocalDevice,
        msg2: &Msg2,
        rng: &mut R,
    ) -> Result<Msg3, AbortReason> {
        if msg2.cookie != self.cookie {
            return Err(AbortReason::CookieMismatch);
        }
        if msg2.ad2_id != self.peer || msg2.ad1_id != self.local {
            return Err(AbortReason::UnexpectedMessage);
        }
        let peer = self.peer_record(device)?;
        let peer_public = match device.group.decode(&msg2.dh_ad2) {
            Ok(v) if device.group.is_valid_public(&v) => v,
            Ok(_) => return Err(AbortReason::DegenerateExponential),
            Err(_) => return Err(AbortReason::Malformed),
        };
        let own = self.ephemeral.as_ref().expect("initiator holds its exponent until Msg2");
        let n_ad1 = self.own_nonce;
        let keys = timed(&mut self.timings.dh, || {
            let k_dh = compute_shared_secret(own, &peer_public, &device.group)
                .map_err(|_| AbortReason::DegenerateExponential)?;
            derive_session_keys(&k_dh, &n_ad1, &msg2.n_ad2).map_err(|_| AbortReason::LocalFailure)
        })?;
        self.ephemeral = None;
        self.keys = Some(keys);
        self.peer_nonce = Some(msg2.n_ad2);
        self.peer_exponential = Some(msg2.dh_ad2.clone());

        let ad2_data = responder_transcript(
            &self.local,
            &self.peer,
            &self.own_exponential,
            &msg2.dh_ad2,
            &n_ad1,
            &msg2.n_ad2,
        );
        self.check_payload(device, peer, &msg2.sealed_auth, &ad2_data, &concat(&n_ad1, &msg2.n_ad2))?;

        let ad1_data = initiator_transcript(
            &self.local,
            &self.peer,
            &self.own_exponential,
            &msg2.dh_ad2,
            &n_ad1,
            &msg2.n_ad2,
        );
        let device_signature = timed(&mut self.timings.signing, || device.signing_key.sign(ad1_data.as_bytes()));
        let tpm_quote = if msg2.validation_request {
            Some(self.own_quote(device, peer, &concat(&msg2.n_ad2, &n_ad1))?)
        } else {
            None
        };
        let keys = self.keys.as_ref().expect("derived above");
        let sealed_auth = timed(&mut self.timings.sealing, || {
            let payload = AuthPayload {
                device_signature,
                tpm_quote,
            };
            seal(&payload.encode(), keys, rng)
        });
        self.finish();
        Ok(Msg3 {
            sealed_auth,
            cookie: self.cookie,
        })
    }

    /// Responder side of Msg3. Same phase rule as [`Self::process_msg2`].
    pub fn process_msg3(&mut self, device: &LocalDevice, msg3: &Msg3) -> Result<(), AbortReason> {
        if self.role != Role::Responder || self.phase != Phase::AwaitMsg3 {
            return Err(AbortReason::UnexpectedMessage);
        }
        self.process_msg3_inner(device, msg3).map_err(|r| self.fail(r))
    }

    fn process_msg3_inner(&mut self, device: &LocalDevice, msg3: &Msg3) -> Result<(), AbortReason> {
        if msg3.cookie != self.cookie {
            return Err(AbortReason::CookieMismatch);
        }
        let peer = self.peer_record(device)?;
        let n_ad1 = self.peer_nonce.expect("responder learns N_AD1 from Msg1");
        let dh_ad1 = self.peer_exponential.clone().expect("responder learns g^rAD1 from Msg1");
        let ad1_data = initiator_transcript(
            &self.peer,
            &self.local,
            &dh_ad1,
            &self.own_exponential,
            &n_ad1,
            &self.own_nonce,
        );
        let qd = concat(&self.own_nonce, &n_ad1);
        self.check_payload(device, peer, &msg3.sealed_auth, &ad1_data, &qd)?;
        self.finish();
        Ok(())
    }

    /// Applies an abort frame from the peer. Returns whether it matched
    /// this session and changed its phase.
    pub fn abort_from_peer(&mut self, frame: &AbortFrame) -> bool {
        if frame.cookie != self.cookie || self.phase == Phase::Aborted {
            return false;
        }
        self.peer_abort = Some(frame.reason);
        self.fail(AbortReason::PeerAborted);
        true
    }

    /// Gives up on a session still waiting for a message.
    pub fn time_out(&mut self) -> bool {
        if !self.is_pending() {
            return false;
        }
        self.fail(AbortReason::Timeout);
        true
    }

    /// Aborts a pending session for a local reason (tie-break, eviction).
    pub fn abandon(&mut self, reason: AbortReason) -> bool {
        if !self.is_pending() {
            return false;
        }
        self.fail(reason);
        true
    }

    pub fn is_pending(&self) -> bool {
        matches!(self.phase, Phase::Start | Phase::AwaitMsg2 | Phase::AwaitMsg3)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn local(&self) -> DeviceIdentity {
        self.local
    }

    pub fn peer(&self) -> DeviceIdentity {
        self.peer
    }

    pub fn cookie(&self) -> SessionCookie {
        self.cookie
    }

    pub fn own_nonce(&self) -> Nonce {
        self.own_nonce
    }

    pub fn peer_nonce(&self) -> Option<Nonce> {
        self.peer_nonce
    }

    pub fn own_exponential(&self) -> &[u8] {
        &self.own_exponential
    }

    pub fn peer_exponential(&self) -> Option<&[u8]> {
        self.peer_exponential.as_deref()
    }

    /// Whether the DH secret exponent is still held.
    pub fn holds_ephemeral(&self) -> bool {
        self.ephemeral.is_some()
    }

    pub fn keys(&self) -> Option<&SessionKeys> {
        self.keys.as_ref()
    }

    pub fn peer_verdict(&self) -> Option<TrustVerdict> {
        self.peer_verdict
    }

    pub fn abort_reason(&self) -> Option<AbortReason> {
        self.abort
    }

    /// Reason carried by the peer's abort frame, if one ended the session.
    pub fn peer_abort_reason(&self) -> Option<AbortReason> {
        self.peer_abort
    }

    pub fn timings(&self) -> &PhaseTimings {
        &self.timings
    }

    pub fn established(&self) -> Option<EstablishedSession> {
        if self.phase != Phase::Established {
            return None;
        }
        Some(EstablishedSession {
            session_id: self.cookie,
            local: self.local,
            peer: self.peer,
            role: self.role,
            keys: self.keys.clone()?,
        })
    }

    pub fn abort_frame(&self) -> Option<AbortFrame> {
        self.abort.map(|reason| AbortFrame {
            reason,
            cookie: self.cookie,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{DhGroup, SignatureKeyPair};
    use crate::protocol::{AttestationPolicy, PeerRegistry, QuoteSource};
    use crate::tpm::{BootManifest, ComponentKind, PcrBank};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::sync::OnceLock;

    const INDICES: [usize; 6] = [0, 1, 2, 3, 5, 8];

    fn keys() -> &'static [SignatureKeyPair; 4] {
        static KEYS: OnceLock<[SignatureKeyPair; 4]> = OnceLock::new();
        KEYS.get_or_init(|| {
            let mut rng = ChaCha20Rng::seed_from_u64(7);
            std::array::from_fn(|_| SignatureKeyPair::generate(1024, &mut rng).unwrap())
        })
    }

    fn pair(tamper_ad2: bool) -> (LocalDevice, LocalDevice) {
        let k = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut make = |name: &str, sk: &SignatureKeyPair, aik: &SignatureKeyPair, tamper: bool| {
            let mut tpm = PcrBank::new(aik.clone());
            let mut m = BootManifest::reference(name);
            let golden_src = {
                let mut b = PcrBank::new(aik.clone());
                b.boot(&m).unwrap();
                b.golden(&INDICES).unwrap()
            };
            if tamper {
                m.tamper_image(ComponentKind::OsCode, 0).unwrap();
            }
            tpm.boot(&m).unwrap();
            (
                LocalDevice {
                    identity: DeviceIdentity::random(&mut rng),
                    name: name.into(),
                    signing_key: sk.clone(),
                    tpm,
                    registry: PeerRegistry::new(),
                    group: DhGroup::modp1024(),
                    policy: AttestationPolicy::default(),
                    quote_source: QuoteSource::Live,
                },
                golden_src,
            )
        };
        let (mut a, ga) = make("ad1", &k[0], &k[1], false);
        let (mut b, gb) = make("ad2", &k[2], &k[3], tamper_ad2);
        a.registry
            .insert(PeerRecord {
                identity: b.identity,
                device_key: b.signing_key.verification_key(),
                aik_key: b.tpm.aik_public(),
                golden: gb,
                attestation_indices: INDICES.to_vec(),
            })
            .unwrap();
        b.registry
            .insert(PeerRecord {
                identity: a.identity,
                device_key: a.signing_key.verification_key(),
                aik_key: a.tpm.aik_public(),
                golden: ga,
                attestation_indices: INDICES.to_vec(),
            })
            .unwrap();
        (a, b)
    }

    #[test]
    fn honest_run_agrees() {
        let (a, b) = pair(false);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (mut s1, m1) = HandshakeState::initiate(&a, b.identity, &mut rng).unwrap();
        assert_eq!(s1.phase(), Phase::AwaitMsg2);
        assert!(s1.keys().is_none());
        let (mut s2, m2) = HandshakeState::respond(&b, &m1, &mut rng).unwrap();
        assert_eq!(s2.phase(), Phase::AwaitMsg3);
        let m3 = s1.process_msg2(&a, &m2, &mut rng).unwrap();
        s2.process_msg3(&b, &m3).unwrap();
        let e1 = s1.established().unwrap();
        let e2 = s2.established().unwrap();
        assert_eq!(e1.keys, e2.keys);
        assert_eq!(e1.session_id, e2.session_id);
        assert_eq!(s1.peer_verdict(), Some(TrustVerdict::Trusted));
        assert_eq!(s2.peer_verdict(), Some(TrustVerdict::Trusted));
        assert!(!s1.holds_ephemeral());
        assert!(e1.keys.shared_secret().is_empty());
    }

    #[test]
    fn cookie_is_definition() {
        let (a, b) = pair(false);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (_, m1) = HandshakeState::initiate(&a, b.identity, &mut rng).unwrap();
        let expected = hash_parts(&[&m1.dh_ad1, &m1.n_ad1.0, &a.identity.0, &b.identity.0]);
        assert_eq!(m1.cookie.0, expected.0);
        let (_, again) = HandshakeState::initiate(&a, b.identity, &mut rng).unwrap();
        assert_ne!(again.n_ad1, m1.n_ad1);
        assert_ne!(again.dh_ad1, m1.dh_ad1);
        assert_ne!(again.cookie, m1.cookie);
    }

    #[test]
    fn unprovisioned_peer() {
        let (a, _) = pair(false);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let stranger = DeviceIdentity([0xee; 16]);
        assert_eq!(
            HandshakeState::initiate(&a, stranger, &mut rng).unwrap_err(),
            ProvisioningError::UnknownPeer(stranger)
        );
    }

    #[test]
    fn responder_rejections() {
        let (a, b) = pair(false);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let (_, m1) = HandshakeState::initiate(&a, b.identity, &mut rng).unwrap();

        let mut other = m1.clone();
        other.ad1_id = DeviceIdentity([9; 16]);
        other.cookie = SessionCookie::compute(&other.dh_ad1, &other.n_ad1, &other.ad1_id, &other.ad2_id);
        assert_eq!(
            HandshakeState::respond(&b, &other, &mut rng).unwrap_err(),
            Rejected { reason: AbortReason::UnknownPeer, notify: false }
        );

        let mut bad_cookie = m1.clone();
        bad_cookie.cookie = SessionCookie::compute(&m1.dh_ad1, &m1.n_ad1, &b.identity, &b.identity);
        assert_eq!(
            HandshakeState::respond(&b, &bad_cookie, &mut rng).unwrap_err().reason,
            AbortReason::CookieMismatch
        );

        for value in [0u8, 1] {
            let mut degenerate = m1.clone();
            degenerate.dh_ad1 = vec![0; 128];
            degenerate.dh_ad1[127] = value;
            degenerate.cookie =
                SessionCookie::compute(&degenerate.dh_ad1, &m1.n_ad1, &a.identity, &b.identity);
            assert_eq!(
                HandshakeState::respond(&b, &degenerate, &mut rng).unwrap_err().reason,
                AbortReason::DegenerateExponential
            );
        }
    }

    #[test]
    fn tampered_boot_detected_by_initiator() {
        let (a, b) = pair(true);
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let (mut s1, m1) = HandshakeState::initiate(&a, b.identity, &mut rng).unwrap();
        let (_, m2) = HandshakeState::respond(&b, &m1, &mut rng).unwrap();
        assert_eq!(
            s1.process_msg2(&a, &m2, &mut rng).unwrap_err(),
            AbortReason::AttestationStateMismatch
        );
        assert_eq!(s1.phase(), Phase::Aborted);
        assert!(s1.keys().is_none());
        assert_eq!(s1.abort_frame().unwrap().reason, AbortReason::AttestationStateMismatch);
    }

    #[test]
    fn missing_quote_when_required() {
        let (a, mut b) = pair(false);
        b.policy.request_peer_attestation = false;
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let (mut s1, mut m1) = HandshakeState::initiate(&a, b.identity, &mut rng).unwrap();
        m1.validation_request = false;
        let (mut s2, m2) = HandshakeState::respond(&b, &m1, &mut rng).unwrap();
        assert_eq!(s1.process_msg2(&a, &m2, &mut rng).unwrap_err(), AbortReason::AttestationMissing);

        // The initiator does not demand a quote; the responder's policy
        // (no request) accepts Msg3 without one.
        let (mut a2, b2) = (a.clone(), b.clone());
        a2.policy.require_peer_attestation = false;
        let (mut s1, m1) = HandshakeState::initiate(&a2, b2.identity, &mut rng).unwrap();
        let (mut s2b, m2) = HandshakeState::respond(&b2, &m1, &mut rng).unwrap();
        let m3 = s1.process_msg2(&a2, &m2, &mut rng).unwrap();
        let mut b3 = b2.clone();
        b3.policy.require_peer_attestation = false;
        s2b.process_msg3(&b3, &m3).unwrap();
        assert_eq!(s2b.peer_verdict(), None);
        let _ = s2.time_out();
        assert_eq!(s2.abort_reason(), Some(AbortReason::Timeout));
    }

    #[test]
    fn out_of_phase_messages_leave_state() {
        let (a, b) = pair(false);
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let (mut s1, m1) = HandshakeState::initiate(&a, b.identity, &mut rng).unwrap();
        let (mut s2, m2) = HandshakeState::respond(&b, &m1, &mut rng).unwrap();
        let m3 = s1.process_msg2(&a, &m2, &mut rng).unwrap();
        assert_eq!(s1.process_msg2(&a, &m2, &mut rng).unwrap_err(), AbortReason::UnexpectedMessage);
        assert_eq!(s1.phase(), Phase::Established);
        s2.process_msg3(&b, &m3).unwrap();
        assert_eq!(s2.process_msg3(&b, &m3).unwrap_err(), AbortReason::UnexpectedMessage);
        assert_eq!(s2.phase(), Phase::Established);
    }

    #[test]
    fn transcripts_bind_identities() {
        let (i, r) = (DeviceIdentity([1; 16]), DeviceIdentity([2; 16]));
        let (n1, n2) = (Nonce([3; 32]), Nonce([4; 32]));
        let (x, y) = ([5u8; 8], [6u8; 8]);
        let ad2 = responder_transcript(&i, &r, &x, &y, &n1, &n2);
        let ad1 = initiator_transcript(&i, &r, &x, &y, &n1, &n2);
        assert_ne!(ad1, ad2);
        assert_ne!(ad2, responder_transcript(&r, &i, &x, &y, &n1, &n2));
        assert_eq!(ad2, hash_parts(&[&r.0, &i.0, &x, &y, &n1.0, &n2.0]));
        assert_eq!(ad1, hash_parts(&[&i.0, &r.0, &y, &x, &n2.0, &n1.0]));
    }

    #[test]
    fn tie_break() {
        let lo = DeviceIdentity([1; 16]);
        let hi = DeviceIdentity([2; 16]);
        assert!(initiator_wins(&lo, &hi));
        assert!(!initiator_wins(&hi, &lo));
    }
}
