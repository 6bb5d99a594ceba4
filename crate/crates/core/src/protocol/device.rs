use std::collections::BTreeMap;

use thiserror::Error;

use crate::crypto::{DhGroup, SignatureKeyPair, VerificationKey};
use crate::tpm::{GoldenValues, PcrBank, Quote, TpmError};

use super::DeviceIdentity;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProvisioningError {
    #[error("peer {0} is not provisioned")]
    UnknownPeer(DeviceIdentity),
    #[error("peer {0} is provisioned twice")]
    DuplicatePeer(DeviceIdentity),
}

/// Everything a device knows about one partner before any handshake:
/// its signature verification key, its AIK verification key and its
/// trusted PCR values.
#[derive(Debug, Clone)]
pub struct PeerRecord {
    pub identity: DeviceIdentity,
    pub device_key: VerificationKey,
    pub aik_key: VerificationKey,
    /// What the peer must quote to us.
    pub golden: GoldenValues,
    /// What we quote to the peer.
    pub attestation_indices: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct PeerRegistry {
    peers: BTreeMap<DeviceIdentity, PeerRecord>,
}

impl PeerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, record: PeerRecord) -> Result<(), ProvisioningError> {
        if self.peers.contains_key(&record.identity) {
            return Err(ProvisioningError::DuplicatePeer(record.identity));
        }
        self.peers.insert(record.identity, record);
        Ok(())
    }

    pub fn get(&self, id: &DeviceIdentity) -> Option<&PeerRecord> {
        self.peers.get(id)
    }

    pub fn get_mut(&mut self, id: &DeviceIdentity) -> Option<&mut PeerRecord> {
        self.peers.get_mut(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PeerRecord> {
        self.peers.values()
    }

    pub fn len(&self) -> usize {
        self.peers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peers.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttestationPolicy {
    /// Value of the VR flag we send.
    pub request_peer_attestation: bool,
    /// Abort when the peer's payload carries no quote.
    pub require_peer_attestation: bool,
}

impl Default for AttestationPolicy {
    fn default() -> Self {
        AttestationPolicy {
            request_peer_attestation: true,
            require_peer_attestation: true,
        }
    }
}

/// Where quotes come from. `Replay` models a compromised platform that
/// answers every request with one recorded quote; it exists for the
/// simulator's stale-attestation scenarios.
#[derive(Debug, Clone, Default)]
pub enum QuoteSource {
    #[default]
    Live,
    Replay(Quote),
}

/// Long-term state of one device: identity, keys, TPM and partners.
#[derive(Debug, Clone)]
pub struct LocalDevice {
    pub identity: DeviceIdentity,
    /// Local label only. Never placed on the wire.
    pub name: String,
    pub signing_key: SignatureKeyPair,
    pub tpm: PcrBank,
    pub registry: PeerRegistry,
    pub group: DhGroup,
    pub policy: AttestationPolicy,
    pub quote_source: QuoteSource,
}

impl LocalDevice {
    pub(crate) fn attest(&self, peer: &PeerRecord, qualifying_data: &[u8]) -> Result<Quote, TpmError> {
        match &self.quote_source {
            QuoteSource::Live => self.tpm.quote(&peer.attestation_indices, qualifying_data),
            QuoteSource::Replay(q) => Ok(q.clone()),
        }
    }
}
