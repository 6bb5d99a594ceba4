use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::rngs::OsRng;
use rand::RngCore;
use serde_json::json;
use stcp_core::crypto::SignatureKeyPair;
use stcp_core::protocol::DeviceIdentity;
use stcp_core::tpm::{BootManifest, PcrBank};
use stcp_core::ParamProfile;

use crate::config::{AttestationSection, Bundle, NodeConfigFile};
use crate::error::CliError;

pub struct KeygenArgs {
    pub out: PathBuf,
    pub profile: ParamProfile,
    pub name: Option<String>,
    pub flight_id: String,
    pub force: bool,
}

fn write_file(path: &Path, bytes: &[u8], secret: bool) -> Result<(), CliError> {
    let mut opts = fs::OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    if secret {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    #[cfg(not(unix))]
    let _ = secret;
    let mut f = opts.open(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    f.write_all(bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

/// Writes a new device into `out`: private keys, storage key, reference
/// boot manifest, public bundle and a starter node config with no peers.
pub fn run(args: KeygenArgs) -> Result<serde_json::Value, CliError> {
    let out = &args.out;
    fs::create_dir_all(out).map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
    if out.join("bundle.toml").exists() && !args.force {
        return Err(CliError::usage(format!(
            "{} already holds a device (use --force to replace it)",
            out.display()
        )));
    }

    let mut rng = OsRng;
    let bits = args.profile.rsa_bits();
    let identity = DeviceIdentity::random(&mut rng);
    let name = args.name.unwrap_or_else(|| format!("ad-{}", &identity.to_hex()[..8]));
    log::info!("generating {bits}-bit keys for {name}");
    let gen = |rng: &mut OsRng| SignatureKeyPair::generate(bits, rng).map_err(|e| CliError::io(e.to_string()));
    let signing = gen(&mut rng)?;
    let aik = gen(&mut rng)?;
    let mut storage = [0u8; 32];
    rng.fill_bytes(&mut storage);

    let manifest = BootManifest::reference(&name);
    let mut tpm = PcrBank::new(aik.clone());
    tpm.boot(&manifest).map_err(|e| CliError::io(e.to_string()))?;
    let golden = tpm.golden(&manifest.indices()).map_err(|e| CliError::io(e.to_string()))?;

    let der = |k: &SignatureKeyPair| k.to_der().map_err(|e| CliError::io(e.to_string()));
    let public = |k: &SignatureKeyPair| {
        k.verification_key()
            .to_der()
            .map(hex::encode)
            .map_err(|e| CliError::io(e.to_string()))
    };
    write_file(&out.join("device.key"), &der(&signing)?, true)?;
    write_file(&out.join("aik.key"), &der(&aik)?, true)?;
    write_file(&out.join("storage.key"), hex::encode(storage).as_bytes(), true)?;
    write_file(&out.join("manifest.toml"), manifest.to_toml().as_bytes(), false)?;

    let bundle = Bundle {
        name: name.clone(),
        profile: args.profile,
        identity: identity.to_hex(),
        device_key: public(&signing)?,
        aik_key: public(&aik)?,
        golden: golden.to_hex_list(),
    };
    let bundle_text = toml::to_string(&bundle).map_err(|e| CliError::io(e.to_string()))?;
    write_file(&out.join("bundle.toml"), bundle_text.as_bytes(), false)?;

    let node = NodeConfigFile {
        name: name.clone(),
        profile: args.profile,
        identity: identity.to_hex(),
        signing_key: "device.key".into(),
        aik_key: "aik.key".into(),
        manifest: "manifest.toml".into(),
        storage_key: "storage.key".into(),
        store_a: "store-a/master.rec".into(),
        store_b: "store-b/master.rec".into(),
        flight_id: args.flight_id,
        listen: Some("127.0.0.1:7400".into()),
        timeout_ms: 5000,
        attestation: AttestationSection::default(),
        peers: Vec::new(),
    };
    let node_text = toml::to_string(&node).map_err(|e| CliError::io(e.to_string()))?;
    write_file(&out.join("node.toml"), node_text.as_bytes(), false)?;
    for d in ["store-a", "store-b"] {
        fs::create_dir_all(out.join(d)).map_err(|e| CliError::io(e.to_string()))?;
    }

    Ok(json!({
        "event": "keygen",
        "name": name,
        "identity": identity.to_hex(),
        "profile": args.profile.as_str(),
        "device_key": signing.verification_key().fingerprint(),
        "aik_key": aik.verification_key().fingerprint(),
        "dir": out.display().to_string(),
    }))
}
