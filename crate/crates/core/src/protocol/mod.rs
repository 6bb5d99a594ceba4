//! The three-message secure and trusted channel handshake.
//!
//! ```text
//! 1. AD1 -> AD2 : AD1_i || AD2_i || N_AD1 || g^rAD1 || VR || S_Cookie
//! 2. AD2 -> AD1 : AD2_i || AD1_i || N_AD2 || g^rAD2 || [Sign_AD2(AD2-Data) || Quote_AD2]^Ke_Ka || VR || S_Cookie
//! 3. AD1 -> AD2 : [Sign_AD1(AD1-Data) || Quote_AD1]^Ke_Ka || S_Cookie
//! ```
//!
//! [`HandshakeState`] holds one side of one session. It does no I/O; the
//! drivers in [`crate::net`] move frames between the two sides.

mod codec;
mod device;
mod handshake;
mod identity;
mod message;
mod responder;

pub use codec::{decode, encode, CodecError, CodecErrorKind, MAX_FRAME_LEN};
pub use device::{AttestationPolicy, LocalDevice, PeerRecord, PeerRegistry, ProvisioningError, QuoteSource};
pub use handshake::{
    initiator_transcript, initiator_wins, responder_transcript, EstablishedSession, HandshakeState,
    Phase, PhaseTimings, Rejected, Role, MESSAGE_TIMEOUT,
};
pub use identity::DeviceIdentity;
pub use message::{
    AbortFrame, AbortReason, AuthPayload, MessageType, Msg1, Msg2, Msg3, ProtocolMessage, SessionCookie,
    PROTOCOL_VERSION,
};
pub use responder::{HalfOpenEntry, HalfOpenSessions, DEFAULT_HALF_OPEN_CAP};
