//! Virtual-link keys derived from the master session keys, and the
//! redundant on-disk record that lets a device resume after a reset
//! without running the handshake again.

mod store;

pub use store::{load_copy, persist, resume, CopyFault, Resumed, StorageKey, RECORD_MAGIC, RECORD_VERSION};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;
use zeroize::{Zeroize, ZeroizeOnDrop};

use crate::crypto::{keyed_hash, KEY_LEN};
use crate::protocol::{DeviceIdentity, EstablishedSession, SessionCookie};

#[derive(Debug, Error)]
pub enum VlError {
    #[error("master session record belongs to flight `{record}`, current flight is `{current}`")]
    Expired { record: String, current: String },
    #[error("no valid master session record (store a: {a}; store b: {b})")]
    Unrecoverable { a: CopyFault, b: CopyFault },
    #[error("cannot persist master session record to {path}: {source}")]
    Persistence {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("flight id is {0} bytes, limit is 65535")]
    FlightIdTooLong(usize),
}

/// The handshake's `K_e`/`K_a`, kept for the rest of the flight.
#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct MasterSessionRecord {
    pub session_id: [u8; 32],
    pub peer_id: [u8; 16],
    pub master_ke: [u8; KEY_LEN],
    pub master_ka: [u8; KEY_LEN],
    pub flight_id: String,
    /// Seconds since the Unix epoch.
    pub established_at: u64,
}

impl MasterSessionRecord {
    pub fn from_session(session: &EstablishedSession, flight_id: &str, established_at: u64) -> Self {
        MasterSessionRecord {
            session_id: session.session_id.0,
            peer_id: session.peer.0,
            master_ke: *session.keys.encryption_key(),
            master_ka: *session.keys.mac_key(),
            flight_id: flight_id.to_owned(),
            established_at,
        }
    }

    pub fn session_cookie(&self) -> SessionCookie {
        SessionCookie(self.session_id)
    }

    pub fn peer(&self) -> DeviceIdentity {
        DeviceIdentity(self.peer_id)
    }

    /// Same value as the session keys' fingerprint.
    pub fn fingerprint(&self) -> String {
        crate::crypto::key_fingerprint(&self.master_ke, &self.master_ka)
    }

    pub fn check_flight(&self, current: &str) -> Result<(), VlError> {
        if self.flight_id != current {
            return Err(VlError::Expired {
                record: self.flight_id.clone(),
                current: current.to_owned(),
            });
        }
        Ok(())
    }
}

impl fmt::Debug for MasterSessionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MasterSessionRecord")
            .field("session_id", &hex::encode(&self.session_id[..8]))
            .field("peer_id", &self.peer())
            .field("fingerprint", &self.fingerprint())
            .field("flight_id", &self.flight_id)
            .field("established_at", &self.established_at)
            .finish()
    }
}

/// A is the side that initiated the handshake.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    AtoB,
    BtoA,
}

impl Direction {
    pub fn code(self) -> u8 {
        match self {
            Direction::AtoB => 0,
            Direction::BtoA => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::AtoB => "a2b",
            Direction::BtoA => "b2a",
        }
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a2b" => Ok(Direction::AtoB),
            "b2a" => Ok(Direction::BtoA),
            other => Err(format!("unknown direction `{other}` (expected a2b or b2a)")),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One uni-directional virtual link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VirtualLinkId {
    pub number: u16,
    pub direction: Direction,
}

impl VirtualLinkId {
    pub fn new(number: u16, direction: Direction) -> Self {
        VirtualLinkId { number, direction }
    }

    /// `number:u16 BE || direction:u8`
    pub fn encode(&self) -> [u8; 3] {
        let n = self.number.to_be_bytes();
        [n[0], n[1], self.direction.code()]
    }
}

impl fmt::Display for VirtualLinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "vl{}/{}", self.number, self.direction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeyNeeds {
    Confidentiality,
    Integrity,
    Both,
}

#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct VlKeys {
    pub encryption: Option<[u8; KEY_LEN]>,
    pub mac: Option<[u8; KEY_LEN]>,
}

impl VlKeys {
    /// Hex of the first 8 bytes of `H("stcp-vl-fingerprint" || enc? || mac?)`.
    pub fn fingerprint(&self) -> String {
        let mut parts: Vec<&[u8]> = vec![b"stcp-vl-fingerprint"];
        if let Some(k) = &self.encryption {
            parts.push(b"enc");
            parts.push(k);
        }
        if let Some(k) = &self.mac {
            parts.push(b"mac");
            parts.push(k);
        }
        hex::encode(&crate::crypto::hash_parts(&parts).0[..8])
    }
}

impl fmt::Debug for VlKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VlKeys")
            .field("encryption", &self.encryption.is_some())
            .field("mac", &self.mac.is_some())
            .field("fingerprint", &self.fingerprint())
            .finish()
    }
}

/// `vl_ke = HMAC(master_ke, encode(vl) || "enc")`,
/// `vl_ka = HMAC(master_ka, encode(vl) || "mac")`; only the keys named by
/// `needs` are produced.
pub fn derive_vl_keys(
    record: &MasterSessionRecord,
    vl: VirtualLinkId,
    needs: KeyNeeds,
    current_flight: &str,
) -> Result<VlKeys, VlError> {
    record.check_flight(current_flight)?;
    let id = vl.encode();
    let enc = matches!(needs, KeyNeeds::Confidentiality | KeyNeeds::Both)
        .then(|| keyed_hash(&record.master_ke, &[&id, b"enc"]));
    let mac = matches!(needs, KeyNeeds::Integrity | KeyNeeds::Both)
        .then(|| keyed_hash(&record.master_ka, &[&id, b"mac"]));
    Ok(VlKeys { encryption: enc, mac })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> MasterSessionRecord {
        MasterSessionRecord {
            session_id: [1; 32],
            peer_id: [2; 16],
            master_ke: [3; 32],
            master_ka: [4; 32],
            flight_id: "LH400-2026-10-17".into(),
            established_at: 1_700_000_000,
        }
    }

    #[test]
    fn needs_select_keys() {
        let r = record();
        let vl = VirtualLinkId::new(7, Direction::AtoB);
        let i = derive_vl_keys(&r, vl, KeyNeeds::Integrity, &r.flight_id).unwrap();
        assert!(i.encryption.is_none() && i.mac.is_some());
        let c = derive_vl_keys(&r, vl, KeyNeeds::Confidentiality, &r.flight_id).unwrap();
        assert!(c.encryption.is_some() && c.mac.is_none());
        let b = derive_vl_keys(&r, vl, KeyNeeds::Both, &r.flight_id).unwrap();
        assert_eq!(b.encryption, c.encryption);
        assert_eq!(b.mac, i.mac);
    }

    #[test]
    fn matches_hmac_definition() {
        use hmac::{Hmac, Mac};
        let r = record();
        let k = derive_vl_keys(&r, VirtualLinkId::new(0x0102, Direction::BtoA), KeyNeeds::Both, &r.flight_id)
            .unwrap();
        let mut m = Hmac::<sha2::Sha256>::new_from_slice(&[3; 32]).unwrap();
        m.update(&[0x01, 0x02, 0x01, b'e', b'n', b'c']);
        assert_eq!(k.encryption.unwrap(), <[u8; 32]>::from(m.finalize().into_bytes()));
    }

    #[test]
    fn other_flight_refused() {
        let r = record();
        let err = derive_vl_keys(&r, VirtualLinkId::new(1, Direction::AtoB), KeyNeeds::Both, "next").unwrap_err();
        assert!(matches!(err, VlError::Expired { .. }));
    }

    #[test]
    fn direction_parse() {
        assert_eq!("a2b".parse::<Direction>().unwrap(), Direction::AtoB);
        assert_eq!("b2a".parse::<Direction>().unwrap(), Direction::BtoA);
        assert!("ab".parse::<Direction>().is_err());
    }
}
