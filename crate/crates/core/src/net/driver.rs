//! Runs one handshake over a [`Transport`], one side per call.

use std::net::TcpListener;
use std::time::{Duration, Instant};

use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::protocol::{
    decode, encode, AbortFrame, AbortReason, DeviceIdentity, EstablishedSession, HandshakeState, LocalDevice,
    PhaseTimings, ProtocolMessage, SessionCookie,
};
use crate::tpm::TrustVerdict;

use super::transport::{TcpTransport, Transport, TransportError};

/// A completed handshake as seen by one side.
#[derive(Debug, Clone)]
pub struct DriverOutcome {
    pub session: EstablishedSession,
    pub timings: PhaseTimings,
    pub peer_verdict: Option<TrustVerdict>,
    pub frames_sent: usize,
    pub frames_received: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("handshake failed: reason={reason}{}", peer_reason.map(|r| format!(" peer_reason={r}")).unwrap_or_default())]
pub struct HandshakeFailure {
    pub reason: AbortReason,
    /// Reason from the peer's abort frame, when one arrived.
    pub peer_reason: Option<AbortReason>,
    pub detail: String,
}

impl HandshakeFailure {
    fn new(reason: AbortReason, detail: impl Into<String>) -> Self {
        HandshakeFailure {
            reason,
            peer_reason: None,
            detail: detail.into(),
        }
    }
}

fn transport_failure(e: TransportError) -> HandshakeFailure {
    match e {
        TransportError::Timeout => HandshakeFailure::new(AbortReason::Timeout, "no message within the timeout"),
        TransportError::Closed => HandshakeFailure::new(AbortReason::PeerAborted, "connection closed by peer"),
        other => HandshakeFailure::new(AbortReason::LocalFailure, other.to_string()),
    }
}

struct Link<'a, T: Transport> {
    transport: &'a mut T,
    sent: usize,
    received: usize,
}

impl<T: Transport> Link<'_, T> {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<(), HandshakeFailure> {
        self.transport.send(&encode(msg)).map_err(transport_failure)?;
        self.sent += 1;
        Ok(())
    }

    fn abort(&mut self, reason: AbortReason, cookie: SessionCookie) {
        let _ = self.send(&ProtocolMessage::Abort(AbortFrame { reason, cookie }));
    }

    /// Next frame for `cookie`, or the peer's abort. Frames for other
    /// sessions are skipped; undecodable frames end the session.
    fn receive(&mut self, cookie: Option<SessionCookie>, deadline: Instant) -> Result<ProtocolMessage, HandshakeFailure> {
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let bytes = self.transport.receive(left).map_err(transport_failure)?;
            self.received += 1;
            let msg = decode(&bytes).map_err(|e| HandshakeFailure::new(AbortReason::Malformed, e.to_string()))?;
            if let Some(c) = cookie {
                if msg.cookie() != &c {
                    log::debug!("ignoring frame for another session");
                    continue;
                }
            }
            if let ProtocolMessage::Abort(a) = &msg {
                return Err(HandshakeFailure {
                    reason: AbortReason::PeerAborted,
                    peer_reason: Some(a.reason),
                    detail: "peer sent an abort frame".into(),
                });
            }
            return Ok(msg);
        }
    }
}

/// Initiator side: sends Msg1, processes Msg2, sends Msg3, then waits for
/// the responder to either close the connection (success) or send an
/// abort frame.
pub fn run_initiator<T: Transport, R: RngCore + CryptoRng>(
    device: &LocalDevice,
    transport: &mut T,
    peer: DeviceIdentity,
    rng: &mut R,
    timeout: Duration,
) -> Result<DriverOutcome, HandshakeFailure> {
    let (mut state, msg1) = HandshakeState::initiate(device, peer, rng)
        .map_err(|e| HandshakeFailure::new(AbortReason::UnknownPeer, e.to_string()))?;
    let cookie = state.cookie();
    let mut link = Link {
        transport,
        sent: 0,
        received: 0,
    };
    link.send(&ProtocolMessage::Msg1(msg1))?;
    let msg2 = match link.receive(Some(cookie), Instant::now() + timeout) {
        Ok(ProtocolMessage::Msg2(m)) => m,
        Ok(other) => {
            link.abort(AbortReason::UnexpectedMessage, cookie);
            return Err(HandshakeFailure::new(
                AbortReason::UnexpectedMessage,
                format!("expected Msg2, got {:?}", other.message_type()),
            ));
        }
        Err(f) => {
            if f.reason == AbortReason::Timeout {
                link.abort(AbortReason::Timeout, cookie);
            }
            return Err(f);
        }
    };
    let msg3 = match state.process_msg2(device, &msg2, rng) {
        Ok(m) => m,
        Err(reason) => {
            link.abort(reason, cookie);
            return Err(HandshakeFailure::new(reason, "Msg2 rejected"));
        }
    };
    link.send(&ProtocolMessage::Msg3(msg3))?;
    match link.receive(Some(cookie), Instant::now() + timeout) {
        Err(f) if f.reason == AbortReason::PeerAborted && f.peer_reason.is_none() => {}
        Err(f) => return Err(f),
        Ok(other) => {
            return Err(HandshakeFailure::new(
                AbortReason::UnexpectedMessage,
                format!("unexpected {:?} after Msg3", other.message_type()),
            ))
        }
    }
    Ok(DriverOutcome {
        session: state.established().expect("Msg2 accepted"),
        timings: *state.timings(),
        peer_verdict: state.peer_verdict(),
        frames_sent: link.sent,
        frames_received: link.received,
    })
}

/// Responder side: answers one Msg1 and checks the Msg3. Closes the
/// transport on success.
pub fn run_responder<T: Transport, R: RngCore + CryptoRng>(
    device: &LocalDevice,
    transport: &mut T,
    rng: &mut R,
    timeout: Duration,
) -> Result<DriverOutcome, HandshakeFailure> {
    let mut link = Link {
        transport,
        sent: 0,
        received: 0,
    };
    let msg1 = match link.receive(None, Instant::now() + timeout)? {
        ProtocolMessage::Msg1(m) => m,
        other => {
            link.abort(AbortReason::UnexpectedMessage, *other.cookie());
            return Err(HandshakeFailure::new(
                AbortReason::UnexpectedMessage,
                format!("expected Msg1, got {:?}", other.message_type()),
            ));
        }
    };
    let cookie = msg1.cookie;
    let (mut state, msg2) = match HandshakeState::respond(device, &msg1, rng) {
        Ok(v) => v,
        Err(rejected) => {
            if rejected.notify {
                link.abort(rejected.reason, cookie);
            }
            link.transport.close();
            return Err(HandshakeFailure::new(rejected.reason, "Msg1 rejected"));
        }
    };
    link.send(&ProtocolMessage::Msg2(msg2))?;
    let msg3 = match link.receive(Some(cookie), Instant::now() + timeout) {
        Ok(ProtocolMessage::Msg3(m)) => m,
        Ok(other) => {
            link.abort(AbortReason::UnexpectedMessage, cookie);
            return Err(HandshakeFailure::new(
                AbortReason::UnexpectedMessage,
                format!("expected Msg3, got {:?}", other.message_type()),
            ));
        }
        Err(f) => {
            if f.reason == AbortReason::Timeout {
                link.abort(AbortReason::Timeout, cookie);
            }
            return Err(f);
        }
    };
    if let Err(reason) = state.process_msg3(device, &msg3) {
        link.abort(reason, cookie);
        return Err(HandshakeFailure::new(reason, "Msg3 rejected"));
    }
    link.transport.close();
    Ok(DriverOutcome {
        session: state.established().expect("Msg3 accepted"),
        timings: *state.timings(),
        peer_verdict: state.peer_verdict(),
        frames_sent: link.sent,
        frames_received: link.received,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyStats {
    pub min: Duration,
    pub median: Duration,
    pub mean: Duration,
    pub max: Duration,
}

impl LatencyStats {
    /// `None` for an empty sample set.
    pub fn from_samples(samples: &[Duration]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort();
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2
        };
        let total: Duration = sorted.iter().sum();
        Some(LatencyStats {
            min: sorted[0],
            median,
            mean: total / n as u32,
            max: sorted[n - 1],
        })
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub samples: Vec<Duration>,
    pub stats: LatencyStats,
    /// Mean per-handshake work at the initiator.
    pub phases: PhaseTimings,
    /// Mean per-handshake work at the responder.
    pub responder_phases: PhaseTimings,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error("run {run} failed: {failure}")]
    Failed { run: usize, failure: HandshakeFailure },
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
}

fn mean_phases(all: &[PhaseTimings]) -> PhaseTimings {
    let mut sum = PhaseTimings::default();
    for p in all {
        sum.add(p);
    }
    let n = all.len().max(1) as u32;
    PhaseTimings {
        dh: sum.dh / n,
        signing: sum.signing / n,
        attestation: sum.attestation / n,
        sealing: sum.sealing / n,
    }
}

/// Runs `repetitions` handshakes from `initiator` to `peer`, opening a new
/// transport with `connect` for each. Latency is measured at the initiator
/// from Msg1 creation until the responder confirms; connection setup is
/// excluded.
pub fn bench_handshake<T, C, R>(
    initiator: &LocalDevice,
    peer: DeviceIdentity,
    repetitions: usize,
    mut connect: C,
    rng: &mut R,
    timeout: Duration,
) -> Result<BenchReport, BenchError>
where
    T: Transport,
    C: FnMut() -> Result<T, TransportError>,
    R: RngCore + CryptoRng,
{
    if repetitions == 0 {
        return Err(BenchError::NoRepetitions);
    }
    let mut samples = Vec::with_capacity(repetitions);
    let mut phases = Vec::with_capacity(repetitions);
    for run in 0..repetitions {
        let mut transport = connect()?;
        let start = Instant::now();
        let outcome = run_initiator(initiator, &mut transport, peer, rng, timeout)
            .map_err(|failure| BenchError::Failed { run, failure })?;
        samples.push(start.elapsed());
        phases.push(outcome.timings);
        transport.close();
    }
    Ok(BenchReport {
        stats: LatencyStats::from_samples(&samples).expect("non-empty"),
        samples,
        phases: mean_phases(&phases),
        responder_phases: PhaseTimings::default(),
    })
}

/// Benchmarks over loopback TCP with the responder on its own thread.
pub fn bench_tcp_loopback(
    initiator: &LocalDevice,
    responder: LocalDevice,
    repetitions: usize,
    seed: u64,
) -> Result<BenchReport, BenchError> {
    if repetitions == 0 {
        return Err(BenchError::NoRepetitions);
    }
    let listener = TcpListener::bind("127.0.0.1:0").map_err(TransportError::from)?;
    let addr = listener.local_addr().map_err(TransportError::from)?;
    let peer = responder.identity;
    let server = std::thread::spawn(move || -> Result<Vec<PhaseTimings>, HandshakeFailure> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
        let mut phases = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let mut t = TcpTransport::accept(&listener)
                .map_err(|e| HandshakeFailure::new(AbortReason::LocalFailure, e.to_string()))?;
            let out = run_responder(&responder, &mut t, &mut rng, crate::protocol::MESSAGE_TIMEOUT)?;
            phases.push(out.timings);
        }
        Ok(phases)
    });
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let result = bench_handshake(
        initiator,
        peer,
        repetitions,
        || TcpTransport::connect(addr, Duration::from_secs(5)),
        &mut rng,
        crate::protocol::MESSAGE_TIMEOUT,
    );
    if result.is_err() {
        // The responder may be blocked in accept; a connection that closes
        // at once makes it fail and return.
        let _ = std::net::TcpStream::connect(addr);
    }
    let server_result = server.join().expect("responder thread panicked");
    let mut report = result?;
    let responder_phases = server_result.map_err(|failure| BenchError::Failed { run: 0, failure })?;
    report.responder_phases = mean_phases(&responder_phases);
    Ok(report)
}
