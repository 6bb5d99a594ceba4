use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::crypto::{hash_parts, Nonce, SealedEnvelope, Signature, DIGEST_LEN};
use crate::tpm::Quote;

use super::DeviceIdentity;

pub const PROTOCOL_VERSION: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum MessageType {
    Msg1 = 0x01,
    Msg2 = 0x02,
    Msg3 = 0x03,
    Abort = 0x7F,
}

impl MessageType {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(MessageType::Msg1),
            0x02 => Some(MessageType::Msg2),
            0x03 => Some(MessageType::Msg3),
            0x7F => Some(MessageType::Abort),
            _ => None,
        }
    }
}

/// `H(g^rAD1 || N_AD1 || AD1_i || AD2_i)`, echoed in every message of a
/// session.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SessionCookie(pub [u8; DIGEST_LEN]);

impl SessionCookie {
    pub fn compute(dh_ad1: &[u8], n_ad1: &Nonce, ad1: &DeviceIdentity, ad2: &DeviceIdentity) -> Self {
        SessionCookie(hash_parts(&[dh_ad1, n_ad1.as_bytes(), ad1.as_bytes(), ad2.as_bytes()]).0)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for SessionCookie {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionCookie({})", &self.to_hex()[..16])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Msg1 {
    pub ad1_id: DeviceIdentity,
    pub ad2_id: DeviceIdentity,
    pub n_ad1: Nonce,
    /// `g^rAD1`, big-endian at the group width.
    pub dh_ad1: Vec<u8>,
    pub validation_request: bool,
    pub cookie: SessionCookie,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Msg2 {
    pub ad2_id: DeviceIdentity,
    pub ad1_id: DeviceIdentity,
    pub n_ad2: Nonce,
    pub dh_ad2: Vec<u8>,
    pub sealed_auth: SealedEnvelope,
    pub validation_request: bool,
    pub cookie: SessionCookie,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Msg3 {
    pub sealed_auth: SealedEnvelope,
    pub cookie: SessionCookie,
}

/// Sent in clear when a side gives up on a session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbortFrame {
    pub reason: AbortReason,
    pub cookie: SessionCookie,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolMessage {
    Msg1(Msg1),
    Msg2(Msg2),
    Msg3(Msg3),
    Abort(AbortFrame),
}

impl ProtocolMessage {
    pub fn message_type(&self) -> MessageType {
        match self {
            ProtocolMessage::Msg1(_) => MessageType::Msg1,
            ProtocolMessage::Msg2(_) => MessageType::Msg2,
            ProtocolMessage::Msg3(_) => MessageType::Msg3,
            ProtocolMessage::Abort(_) => MessageType::Abort,
        }
    }

    pub fn cookie(&self) -> &SessionCookie {
        match self {
            ProtocolMessage::Msg1(m) => &m.cookie,
            ProtocolMessage::Msg2(m) => &m.cookie,
            ProtocolMessage::Msg3(m) => &m.cookie,
            ProtocolMessage::Abort(m) => &m.cookie,
        }
    }

    pub fn cookie_mut(&mut self) -> &mut SessionCookie {
        match self {
            ProtocolMessage::Msg1(m) => &mut m.cookie,
            ProtocolMessage::Msg2(m) => &mut m.cookie,
            ProtocolMessage::Msg3(m) => &mut m.cookie,
            ProtocolMessage::Abort(m) => &mut m.cookie,
        }
    }
}

/// Plaintext of the sealed part of messages 2 and 3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthPayload {
    pub device_signature: Signature,
    /// Present when the peer set its validation request flag.
    pub tpm_quote: Option<Quote>,
}

macro_rules! abort_reasons {
    ($($name:ident = $code:literal),* $(,)?) => {
        /// Why a session ended without being established. The code is the
        /// byte carried by abort frames.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum AbortReason {
            $($name = $code,)*
        }

        impl AbortReason {
            pub const ALL: &'static [AbortReason] = &[$(AbortReason::$name,)*];

            pub fn code(self) -> u8 {
                self as u8
            }

            pub fn from_code(code: u8) -> Option<Self> {
                match code {
                    $($code => Some(AbortReason::$name),)*
                    _ => None,
                }
            }

            pub fn as_str(self) -> &'static str {
                match self {
                    $(AbortReason::$name => stringify!($name),)*
                }
            }
        }

        impl FromStr for AbortReason {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $(stringify!($name) => Ok(AbortReason::$name),)*
                    other => Err(format!("unknown abort reason `{other}`")),
                }
            }
        }
    };
}

abort_reasons! {
    CookieMismatch = 1,
    DegenerateExponential = 2,
    SealIntegrity = 3,
    PeerSignatureInvalid = 4,
    AttestationSignatureInvalid = 5,
    AttestationStale = 6,
    AttestationStateMismatch = 7,
    AttestationMissing = 8,
    UnknownPeer = 9,
    UnexpectedMessage = 10,
    Malformed = 11,
    Timeout = 12,
    PeerAborted = 13,
    Superseded = 14,
    HalfOpenEvicted = 15,
    LocalFailure = 16,
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
