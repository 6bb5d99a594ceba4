//! Binary framing. All integers are big-endian.
//!
//! ```text
//! frame   = len:u32 version:u8 type:u8 body        (len counts version..end)
//! Msg1    = ad1_id[16] ad2_id[16] n_ad1[32] dh_len:u16 dh vr:u8 cookie[32]
//! Msg2    = ad2_id[16] ad1_id[16] n_ad2[32] dh_len:u16 dh env_len:u32 envelope vr:u8 cookie[32]
//! Msg3    = env_len:u32 envelope cookie[32]
//! Abort   = reason:u8 cookie[32]
//! envelope = iv[16] ct_len:u32 ct tag[32]
//! ```
//!
//! The sealed payload uses the same conventions:
//!
//! ```text
//! payload = sig_len:u16 sig has_quote:u8 [quote]
//! quote   = count:u8 (index:u8 digest[32]){count} qd_len:u16 qd sig_len:u16 sig
//! ```

use std::fmt;

use thiserror::Error;

use crate::crypto::{Digest, Nonce, SealedEnvelope, Signature};
use crate::tpm::{Quote, PCR_COUNT};

use super::message::*;
use super::DeviceIdentity;

pub const MAX_FRAME_LEN: usize = 1 << 20;
const MAX_DH_LEN: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodecErrorKind {
    Truncated { needed: usize, available: usize },
    LengthMismatch { declared: usize, actual: usize },
    FrameTooLarge(usize),
    BadVersion(u8),
    UnknownType(u8),
    InvalidBool(u8),
    UnknownReason(u8),
    FieldTooLong { field: &'static str, len: usize },
    PcrIndex(u8),
    Envelope(&'static str),
    TrailingBytes(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct CodecError {
    pub offset: usize,
    pub kind: CodecErrorKind,
}

impl fmt::Display for CodecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "codec error at offset {}: {:?}", self.offset, self.kind)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], base: usize) -> Self {
        Reader { buf, pos: 0, base }
    }

    fn err(&self, kind: CodecErrorKind) -> CodecError {
        CodecError {
            offset: self.base + self.pos,
            kind,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let available = self.buf.len() - self.pos;
        if available < n {
            return Err(self.err(CodecErrorKind::Truncated { needed: n, available }));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    fn bool(&mut self) -> Result<bool, CodecError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => {
                self.pos -= 1;
                Err(self.err(CodecErrorKind::InvalidBool(b)))
            }
        }
    }

    fn identity(&mut self) -> Result<DeviceIdentity, CodecError> {
        Ok(DeviceIdentity(self.array()?))
    }

    fn nonce(&mut self) -> Result<Nonce, CodecError> {
        Ok(Nonce(self.array()?))
    }

    fn cookie(&mut self) -> Result<SessionCookie, CodecError> {
        Ok(SessionCookie(self.array()?))
    }

    fn dh(&mut self) -> Result<Vec<u8>, CodecError> {
        let len = self.u16()? as usize;
        if len > MAX_DH_LEN {
            return Err(self.err(CodecErrorKind::FieldTooLong { field: "dh", len }));
        }
        Ok(self.take(len)?.to_vec())
    }

    fn envelope(&mut self) -> Result<SealedEnvelope, CodecError> {
        let len = self.u32()? as usize;
        let start = self.pos;
        let bytes = self.take(len)?;
        SealedEnvelope::from_bytes(bytes).map_err(|e| CodecError {
            offset: self.base + start,
            kind: CodecErrorKind::Envelope(match e {
                crate::crypto::CryptoError::MalformedEnvelope(m) => m,
                _ => "invalid",
            }),
        })
    }

    fn short_bytes(&mut self) -> Result<Vec<u8>, CodecError> {
        let len = self.u16()? as usize;
        Ok(self.take(len)?.to_vec())
    }

    fn finish(&self) -> Result<(), CodecError> {
        let rest = self.buf.len() - self.pos;
        if rest != 0 {
            return Err(self.err(CodecErrorKind::TrailingBytes(rest)));
        }
        Ok(())
    }
}

fn put_dh(out: &mut Vec<u8>, dh: &[u8]) {
    out.extend_from_slice(&(dh.len() as u16).to_be_bytes());
    out.extend_from_slice(dh);
}

fn put_envelope(out: &mut Vec<u8>, env: &SealedEnvelope) {
    let bytes = env.to_bytes();
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(&bytes);
}

fn put_short(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u16).to_be_bytes());
    out.extend_from_slice(b);
}

pub fn encode(message: &ProtocolMessage) -> Vec<u8> {
    let mut body = vec![PROTOCOL_VERSION, message.message_type() as u8];
    match message {
        ProtocolMessage::Msg1(m) => {
            body.extend_from_slice(m.ad1_id.as_bytes());
            body.extend_from_slice(m.ad2_id.as_bytes());
            body.extend_from_slice(m.n_ad1.as_bytes());
            put_dh(&mut body, &m.dh_ad1);
            body.push(m.validation_request as u8);
            body.extend_from_slice(&m.cookie.0);
        }
        ProtocolMessage::Msg2(m) => {
            body.extend_from_slice(m.ad2_id.as_bytes());
            body.extend_from_slice(m.ad1_id.as_bytes());
            body.extend_from_slice(m.n_ad2.as_bytes());
            put_dh(&mut body, &m.dh_ad2);
            put_envelope(&mut body, &m.sealed_auth);
            body.push(m.validation_request as u8);
            body.extend_from_slice(&m.cookie.0);
        }
        ProtocolMessage::Msg3(m) => {
            put_envelope(&mut body, &m.sealed_auth);
            body.extend_from_slice(&m.cookie.0);
        }
        ProtocolMessage::Abort(m) => {
            body.push(m.reason.code());
            body.extend_from_slice(&m.cookie.0);
        }
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

/// Decodes exactly one frame. Anything short, long or out of range is a
/// [`CodecError`]; no partially decoded message is ever returned.
pub fn decode(bytes: &[u8]) -> Result<ProtocolMessage, CodecError> {
    let mut head = Reader::new(bytes, 0);
    let declared = head.u32()? as usize;
    if declared > MAX_FRAME_LEN {
        return Err(CodecError {
            offset: 0,
            kind: CodecErrorKind::FrameTooLarge(declared),
        });
    }
    let actual = bytes.len() - 4;
    if declared != actual {
        return Err(CodecError {
            offset: 0,
            kind: CodecErrorKind::LengthMismatch { declared, actual },
        });
    }
    let mut r = Reader::new(&bytes[4..], 4);
    let version = r.u8()?;
    if version != PROTOCOL_VERSION {
        return Err(CodecError {
            offset: 4,
            kind: CodecErrorKind::BadVersion(version),
        });
    }
    let type_code = r.u8()?;
    let kind = MessageType::from_code(type_code).ok_or(CodecError {
        offset: 5,
        kind: CodecErrorKind::UnknownType(type_code),
    })?;
    let msg = match kind {
        MessageType::Msg1 => ProtocolMessage::Msg1(Msg1 {
            ad1_id: r.identity()?,
            ad2_id: r.identity()?,
            n_ad1: r.nonce()?,
            dh_ad1: r.dh()?,
            validation_request: r.bool()?,
            cookie: r.cookie()?,
        }),
        MessageType::Msg2 => ProtocolMessage::Msg2(Msg2 {
            ad2_id: r.identity()?,
            ad1_id: r.identity()?,
            n_ad2: r.nonce()?,
            dh_ad2: r.dh()?,
            sealed_auth: r.envelope()?,
            validation_request: r.bool()?,
            cookie: r.cookie()?,
        }),
        MessageType::Msg3 => ProtocolMessage::Msg3(Msg3 {
            sealed_auth: r.envelope()?,
            cookie: r.cookie()?,
        }),
        MessageType::Abort => {
            let code = r.u8()?;
            let reason = AbortReason::from_code(code).ok_or(CodecError {
                offset: 6,
                kind: CodecErrorKind::UnknownReason(code),
            })?;
            ProtocolMessage::Abort(AbortFrame {
                reason,
                cookie: r.cookie()?,
            })
        }
    };
    r.finish()?;
    Ok(msg)
}

impl AuthPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_short(&mut out, &self.device_signature.0);
        match &self.tpm_quote {
            None => out.push(0),
            Some(q) => {
                out.push(1);
                out.extend_from_slice(&Quote::encode_pcr_values(&q.pcr_values));
                put_short(&mut out, &q.qualifying_data);
                put_short(&mut out, &q.signature.0);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes, 0);
        let device_signature = Signature(r.short_bytes()?);
        let tpm_quote = if r.bool()? {
            let count = r.u8()? as usize;
            let mut pcr_values = Vec::with_capacity(count);
            for _ in 0..count {
                let index = r.u8()?;
                if index as usize >= PCR_COUNT {
                    r.pos -= 1;
                    return Err(r.err(CodecErrorKind::PcrIndex(index)));
                }
                pcr_values.push((index, Digest(r.array()?)));
            }
            let qualifying_data = r.short_bytes()?;
            let signature = Signature(r.short_bytes()?);
            Some(Quote {
                pcr_values,
                qualifying_data,
                signature,
            })
        } else {
            None
        };
        r.finish()?;
        Ok(AuthPayload {
            device_signature,
            tpm_quote,
        })
    }
}
