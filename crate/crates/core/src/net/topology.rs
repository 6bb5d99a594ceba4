use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::SignatureKeyPair;
use crate::protocol::{
    AttestationPolicy, DeviceIdentity, LocalDevice, PeerRecord, PeerRegistry, QuoteSource,
    DEFAULT_HALF_OPEN_CAP,
};
use crate::tpm::{BootManifest, ComponentKind, PcrBank};
use crate::ParamProfile;

/// PCR indices every simulated node quotes: all eight boot stages at their
/// default positions.
pub const DEFAULT_ATTESTATION_INDICES: [usize; 7] = [0, 1, 2, 3, 4, 5, 8];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("setup error: {0}")]
pub struct SetupError(pub String);

impl SetupError {
    pub(crate) fn new(msg: impl Into<String>) -> Self {
        SetupError(msg.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootTamper {
    pub component: ComponentKind,
    #[serde(default)]
    pub byte: usize,
}

fn yes() -> bool {
    true
}

fn default_cap() -> usize {
    DEFAULT_HALF_OPEN_CAP
}

/// One simulated device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub label: String,
    /// Boots with one image byte flipped; peers keep the untampered golden
    /// values.
    #[serde(default)]
    pub tamper: Option<BootTamper>,
    /// Answers every attestation request with a quote recorded for an
    /// earlier exchange.
    #[serde(default)]
    pub stale_quote: bool,
    #[serde(default = "yes")]
    pub require_attestation: bool,
    #[serde(default = "default_cap")]
    pub half_open_cap: usize,
}

impl NodeSpec {
    pub fn honest(label: &str) -> Self {
        NodeSpec {
            label: label.to_owned(),
            tamper: None,
            stale_quote: false,
            require_attestation: true,
            half_open_cap: DEFAULT_HALF_OPEN_CAP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProvisionedNode {
    pub label: String,
    pub device: LocalDevice,
    pub half_open_cap: usize,
    /// Untampered boot image set, which is what peers trust.
    pub reference_manifest: BootManifest,
}

impl ProvisionedNode {
    pub fn aik(&self) -> SignatureKeyPair {
        self.device.tpm.aik().clone()
    }
}

/// Keys, booted TPMs and peer registries for a set of nodes. Built once and
/// reused for any number of runs.
#[derive(Debug, Clone)]
pub struct ProvisionedTopology {
    pub profile: ParamProfile,
    pub nodes: Vec<ProvisionedNode>,
    /// Keys the network adversary generated for itself.
    pub adversary_signing: SignatureKeyPair,
    pub adversary_aik: SignatureKeyPair,
}

impl ProvisionedTopology {
    pub fn node(&self, label: &str) -> Option<&ProvisionedNode> {
        self.nodes.iter().find(|n| n.label == label)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.label == label)
    }
}

fn boot(aik: &SignatureKeyPair, manifest: &BootManifest) -> Result<PcrBank, SetupError> {
    let mut bank = PcrBank::new(aik.clone());
    bank.boot(manifest).map_err(|e| SetupError::new(e.to_string()))?;
    Ok(bank)
}

/// Generates identities and keys, boots every node and fills each registry
/// with every other node. Deterministic in `seed`.
pub fn provision(profile: ParamProfile, specs: &[NodeSpec], seed: u64) -> Result<ProvisionedTopology, SetupError> {
    if specs.is_empty() {
        return Err(SetupError::new("topology has no nodes"));
    }
    let mut labels = HashSet::new();
    for s in specs {
        if s.label.is_empty() || s.label == "adversary" {
            return Err(SetupError::new(format!("invalid node label `{}`", s.label)));
        }
        if !labels.insert(s.label.as_str()) {
            return Err(SetupError::new(format!("duplicate node label `{}`", s.label)));
        }
        if s.half_open_cap == 0 {
            return Err(SetupError::new(format!("node `{}`: half_open_cap must be positive", s.label)));
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let bits = profile.rsa_bits();
    let keygen = |rng: &mut ChaCha20Rng| {
        SignatureKeyPair::generate(bits, rng).map_err(|e| SetupError::new(e.to_string()))
    };

    struct Raw {
        identity: DeviceIdentity,
        signing: SignatureKeyPair,
        aik: SignatureKeyPair,
        reference: BootManifest,
        bank: PcrBank,
    }
    let mut raws = Vec::with_capacity(specs.len());
    for spec in specs {
        let identity = DeviceIdentity::random(&mut rng);
        let signing = keygen(&mut rng)?;
        let aik = keygen(&mut rng)?;
        let reference = BootManifest::reference(&spec.label);
        let mut booted = reference.clone();
        if let Some(t) = &spec.tamper {
            booted
                .tamper_image(t.component, t.byte)
                .map_err(|e| SetupError::new(format!("node `{}`: {e}", spec.label)))?;
        }
        let bank = boot(&aik, &booted)?;
        raws.push(Raw {
            identity,
            signing,
            aik,
            reference,
            bank,
        });
    }
    let adversary_signing = keygen(&mut rng)?;
    let adversary_aik = keygen(&mut rng)?;

    let mut nodes = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let mut registry = PeerRegistry::new();
        for (j, other) in raws.iter().enumerate() {
            if i == j {
                continue;
            }
            let golden = boot(&other.aik, &other.reference)?
                .golden(&DEFAULT_ATTESTATION_INDICES)
                .map_err(|e| SetupError::new(e.to_string()))?;
            registry
                .insert(PeerRecord {
                    identity: other.identity,
                    device_key: other.signing.verification_key(),
                    aik_key: other.aik.verification_key(),
                    golden,
                    attestation_indices: DEFAULT_ATTESTATION_INDICES.to_vec(),
                })
                .map_err(|e| SetupError::new(e.to_string()))?;
        }
        let raw = &raws[i];
        let quote_source = if spec.stale_quote {
            let mut old = [0u8; 64];
            rand::RngCore::fill_bytes(&mut rng, &mut old);
            let q = raw
                .bank
                .quote(&DEFAULT_ATTESTATION_INDICES, &old)
                .map_err(|e| SetupError::new(e.to_string()))?;
            QuoteSource::Replay(q)
        } else {
            QuoteSource::Live
        };
        nodes.push(ProvisionedNode {
            label: spec.label.clone(),
            device: LocalDevice {
                identity: raw.identity,
                name: spec.label.clone(),
                signing_key: raw.signing.clone(),
                tpm: raw.bank.clone(),
                registry,
                group: profile.dh_group(),
                policy: AttestationPolicy {
                    request_peer_attestation: true,
                    require_peer_attestation: spec.require_attestation,
                },
                quote_source,
            },
            half_open_cap: spec.half_open_cap,
            reference_manifest: raw.reference.clone(),
        });
    }
    let topo = ProvisionedTopology {
        profile,
        nodes,
        adversary_signing,
        adversary_aik,
    };
    let devices: Vec<&LocalDevice> = topo.nodes.iter().map(|n| &n.device).collect();
    check_registries(&devices)?;
    Ok(topo)
}

/// Every registry entry must name a device in the set and carry that
/// device's actual public keys.
pub fn check_registries(devices: &[&LocalDevice]) -> Result<(), SetupError> {
    for d in devices {
        for rec in d.registry.iter() {
            let Some(peer) = devices.iter().find(|p| p.identity == rec.identity) else {
                return Err(SetupError::new(format!("{} lists unknown peer {}", d.name, rec.identity)));
            };
            if rec.device_key != peer.signing_key.verification_key() {
                return Err(SetupError::new(format!(
                    "{} holds a wrong device key for {}",
                    d.name, peer.name
                )));
            }
            if rec.aik_key != peer.tpm.aik_public() {
                return Err(SetupError::new(format!("{} holds a wrong AIK for {}", d.name, peer.name)));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_consistent() {
        let specs = [NodeSpec::honest("ad1"), NodeSpec::honest("ad2")];
        let a = provision(ParamProfile::Test, &specs, 5).unwrap();
        let b = provision(ParamProfile::Test, &specs, 5).unwrap();
        assert_eq!(a.nodes[0].device.identity, b.nodes[0].device.identity);
        assert_eq!(
            a.nodes[1].device.signing_key.verification_key(),
            b.nodes[1].device.signing_key.verification_key()
        );
        assert_eq!(a.nodes[0].device.registry.len(), 1);
        assert!(a.nodes[0].device.registry.get(&a.nodes[1].device.identity).is_some());
    }

    #[test]
    fn rejects_bad_topologies() {
        assert!(provision(ParamProfile::Test, &[], 1).is_err());
        let dup = [NodeSpec::honest("x"), NodeSpec::honest("x")];
        assert!(provision(ParamProfile::Test, &dup, 1).is_err());
        let adv = [NodeSpec::honest("adversary")];
        assert!(provision(ParamProfile::Test, &adv, 1).is_err());
    }

    #[test]
    fn mismatched_registry_detected() {
        let specs = [NodeSpec::honest("ad1"), NodeSpec::honest("ad2")];
        let mut t = provision(ParamProfile::Test, &specs, 5).unwrap();
        let wrong = t.nodes[0].device.signing_key.verification_key();
        let id = t.nodes[1].device.identity;
        t.nodes[0].device.registry.get_mut(&id).unwrap().device_key = wrong;
        let devices: Vec<&LocalDevice> = t.nodes.iter().map(|n| &n.device).collect();
        assert!(check_registries(&devices).is_err());
    }
}
