//! Node configuration and provisioning bundles, both TOML. Relative paths
//! resolve against the directory of the file that names them.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use stcp_core::crypto::{SignatureKeyPair, VerificationKey};
use stcp_core::protocol::{AttestationPolicy, DeviceIdentity, LocalDevice, PeerRecord, PeerRegistry, QuoteSource};
use stcp_core::tpm::{BootManifest, GoldenValues, PcrBank};
use stcp_core::vl::StorageKey;
use stcp_core::ParamProfile;

use crate::error::CliError;

/// Public half of a device, handed to its partners.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bundle {
    #[serde(default)]
    pub name: String,
    pub profile: ParamProfile,
    pub identity: String,
    /// Hex of the DER-encoded public key.
    pub device_key: String,
    pub aik_key: String,
    /// `index:hex` for every register the device quotes.
    pub golden: Vec<String>,
}

impl Bundle {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message())))
    }
}

fn default_true() -> bool {
    true
}

fn default_timeout() -> u64 {
    5000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttestationSection {
    #[serde(default = "default_true")]
    pub request: bool,
    #[serde(default = "default_true")]
    pub require: bool,
}

impl Default for AttestationSection {
    fn default() -> Self {
        AttestationSection {
            request: true,
            require: true,
        }
    }
}

/// One partner. Fields left out are taken from `bundle`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeerEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aik_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub golden: Option<Vec<String>>,
    /// Registers we quote to this peer; defaults to every register our
    /// manifest measures into.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attestation_indices: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub address: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfigFile {
    #[serde(default)]
    pub name: String,
    pub profile: ParamProfile,
    pub identity: String,
    pub signing_key: PathBuf,
    pub aik_key: PathBuf,
    pub manifest: PathBuf,
    pub storage_key: PathBuf,
    pub store_a: PathBuf,
    pub store_b: PathBuf,
    pub flight_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub listen: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub attestation: AttestationSection,
    #[serde(default, rename = "peer")]
    pub peers: Vec<PeerEntry>,
}

/// A parsed and checked node configuration with the TPM booted.
#[derive(Debug)]
pub struct NodeConfig {
    pub profile: ParamProfile,
    pub device: LocalDevice,
    pub addresses: BTreeMap<DeviceIdentity, String>,
    pub storage_key: StorageKey,
    pub store_a: PathBuf,
    pub store_b: PathBuf,
    pub flight_id: String,
    pub listen: Option<String>,
    pub timeout: Duration,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn load_signing_key(path: &Path) -> Result<SignatureKeyPair, CliError> {
    SignatureKeyPair::from_der(&read_bytes(path)?)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn parse_identity(s: &str, what: &str) -> Result<DeviceIdentity, CliError> {
    s.parse().map_err(|e| CliError::config(format!("{what}: {e}")))
}

fn parse_public(hex_der: &str, what: &str) -> Result<VerificationKey, CliError> {
    let der = hex::decode(hex_der.trim()).map_err(|e| CliError::config(format!("{what}: {e}")))?;
    VerificationKey::from_der(&der).map_err(|e| CliError::config(format!("{what}: {e}")))
}

pub fn load_storage_key(path: &Path) -> Result<StorageKey, CliError> {
    let text = read_text(path)?;
    let bytes = hex::decode(text.trim()).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let key: [u8; 32] = bytes
        .try_into()
        .map_err(|_| CliError::config(format!("{}: storage key must be 32 bytes", path.display())))?;
    Ok(StorageKey::new(key))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn peer_record(
    entry: &PeerEntry,
    base: &Path,
    default_indices: &[usize],
    index: usize,
    profile: ParamProfile,
) -> Result<PeerRecord, CliError> {
    let bundle = match &entry.bundle {
        Some(p) => Some(Bundle::load(&resolve(base, p))?),
        None => None,
    };
    let what = |field: &str| format!("peer {}: {field}", index + 1);
    if let Some(b) = &bundle {
        if b.profile != profile {
            return Err(CliError::config(format!(
                "{} is {} but this node runs {profile}",
                what("bundle"),
                b.profile
            )));
        }
    }
    let pick = |own: &Option<String>, from_bundle: Option<&String>, field: &str| -> Result<String, CliError> {
        own.clone()
            .or_else(|| from_bundle.cloned())
            .ok_or_else(|| CliError::config(format!("{} missing (give it or a bundle)", what(field))))
    };
    let identity = pick(&entry.identity, bundle.as_ref().map(|b| &b.identity), "identity")?;
    let device_key = pick(&entry.device_key, bundle.as_ref().map(|b| &b.device_key), "device_key")?;
    let aik_key = pick(&entry.aik_key, bundle.as_ref().map(|b| &b.aik_key), "aik_key")?;
    let golden = entry
        .golden
        .clone()
        .or_else(|| bundle.as_ref().map(|b| b.golden.clone()))
        .ok_or_else(|| CliError::config(format!("{} missing", what("golden"))))?;
    let golden = GoldenValues::from_hex_list(&golden).map_err(|e| CliError::config(format!("{}: {e}", what("golden"))))?;
    if golden.entries().is_empty() {
        return Err(CliError::config(format!("{} is empty", what("golden"))));
    }
    Ok(PeerRecord {
        identity: parse_identity(&identity, &what("identity"))?,
        device_key: parse_public(&device_key, &what("device_key"))?,
        aik_key: parse_public(&aik_key, &what("aik_key"))?,
        golden,
        attestation_indices: entry.attestation_indices.clone().unwrap_or_else(|| default_indices.to_vec()),
    })
}

impl NodeConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        let file: NodeConfigFile =
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_file(file, base)
    }

    pub fn from_file(file: NodeConfigFile, base: &Path) -> Result<Self, CliError> {
        let identity = parse_identity(&file.identity, "identity")?;
        let signing_key = load_signing_key(&resolve(base, &file.signing_key))?;
        let aik = load_signing_key(&resolve(base, &file.aik_key))?;
        let manifest_path = resolve(base, &file.manifest);
        let manifest = BootManifest::load(&manifest_path)
            .map_err(|e| CliError::config(format!("{}: {e}", manifest_path.display())))?;
        let mut tpm = PcrBank::new(aik);
        tpm.boot(&manifest).map_err(|e| CliError::config(format!("boot: {e}")))?;
        let storage_key = load_storage_key(&resolve(base, &file.storage_key))?;
        if file.flight_id.is_empty() {
            return Err(CliError::config("flight_id is empty"));
        }

        let indices = manifest.indices();
        let mut registry = PeerRegistry::new();
        let mut addresses = BTreeMap::new();
        let mut seen = HashSet::new();
        for (i, entry) in file.peers.iter().enumerate() {
            let record = peer_record(entry, base, &indices, i, file.profile)?;
            if record.identity == identity {
                return Err(CliError::config(format!("peer {} has this node's own identity", i + 1)));
            }
            if !seen.insert(record.identity) {
                return Err(CliError::config(format!("peer {} repeats identity {}", i + 1, record.identity)));
            }
            if let Some(a) = &entry.address {
                addresses.insert(record.identity, a.clone());
            }
            registry.insert(record).map_err(|e| CliError::config(e.to_string()))?;
        }

        Ok(NodeConfig {
            profile: file.profile,
            device: LocalDevice {
                identity,
                name: file.name,
                signing_key,
                tpm,
                registry,
                group: file.profile.dh_group(),
                policy: AttestationPolicy {
                    request_peer_attestation: file.attestation.request,
                    require_peer_attestation: file.attestation.require,
                },
                quote_source: QuoteSource::Live,
            },
            addresses,
            storage_key,
            store_a: resolve(base, &file.store_a),
            store_b: resolve(base, &file.store_b),
            flight_id: file.flight_id,
            listen: file.listen,
            timeout: Duration::from_millis(file.timeout_ms),
        })
    }
}
