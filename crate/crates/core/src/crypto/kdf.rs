use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha2::Sha256;
use zeroize::{Zeroize, ZeroizeOnDrop};

use super::{hash_parts, CryptoError};

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 32;

const LABEL_ENC: &[u8] = b"1";
const LABEL_MAC: &[u8] = b"2";

type HmacSha256 = Hmac<Sha256>;

/// HMAC-SHA-256 over the concatenation of `parts`.
pub fn keyed_hash(key: &[u8], parts: &[&[u8]]) -> [u8; KEY_LEN] {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    for p in parts {
        mac.update(p);
    }
    mac.finalize().into_bytes().into()
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Nonce(pub [u8; NONCE_LEN]);

impl Nonce {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut b = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut b);
        Nonce(b)
    }

    pub fn as_bytes(&self) -> &[u8; NONCE_LEN] {
        &self.0
    }
}

impl std::fmt::Debug for Nonce {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Nonce({})", hex::encode(self.0))
    }
}

/// Session keys derived from one handshake.
///
/// `k_dh` is retained only until the handshake finishes; see
/// [`SessionKeys::forget_shared_secret`].
#[derive(Clone, Zeroize, ZeroizeOnDrop)]
pub struct SessionKeys {
    k_dh: Vec<u8>,
    k_e: [u8; KEY_LEN],
    k_a: [u8; KEY_LEN],
}

impl SessionKeys {
    pub fn encryption_key(&self) -> &[u8; KEY_LEN] {
        &self.k_e
    }

    pub fn mac_key(&self) -> &[u8; KEY_LEN] {
        &self.k_a
    }

    /// Raw DH output. Empty once forgotten.
    pub fn shared_secret(&self) -> &[u8] {
        &self.k_dh
    }

    pub fn forget_shared_secret(&mut self) {
        self.k_dh.zeroize();
        self.k_dh = Vec::new();
    }

    /// Short public identifier of `(k_e, k_a)`, safe to print.
    pub fn fingerprint(&self) -> String {
        key_fingerprint(&self.k_e, &self.k_a)
    }

    /// Rebuilds keys from stored master keys, without a DH secret.
    pub fn from_master(k_e: [u8; KEY_LEN], k_a: [u8; KEY_LEN]) -> Self {
        SessionKeys {
            k_dh: Vec::new(),
            k_e,
            k_a,
        }
    }
}

impl std::fmt::Debug for SessionKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionKeys")
            .field("fingerprint", &self.fingerprint())
            .finish_non_exhaustive()
    }
}

impl PartialEq for SessionKeys {
    fn eq(&self, other: &Self) -> bool {
        self.k_e == other.k_e && self.k_a == other.k_a
    }
}

impl Eq for SessionKeys {}

pub(crate) fn key_fingerprint(k_e: &[u8; KEY_LEN], k_a: &[u8; KEY_LEN]) -> String {
    let d = hash_parts(&[b"stcp-fingerprint", k_e, k_a]);
    hex::encode(&d.0[..8])
}

/// `k_e = HMAC(k_dh, n_ad1 || n_ad2 || "1")`, `k_a = HMAC(k_dh, n_ad1 || n_ad2 || "2")`.
///
/// Nonce order is always (initiator, responder), whichever side derives.
pub fn derive_session_keys(
    k_dh: &[u8],
    n_ad1: &Nonce,
    n_ad2: &Nonce,
) -> Result<SessionKeys, CryptoError> {
    if k_dh.is_empty() {
        return Err(CryptoError::EmptySharedSecret);
    }
    let k_e = keyed_hash(k_dh, &[&n_ad1.0, &n_ad2.0, LABEL_ENC]);
    let k_a = keyed_hash(k_dh, &[&n_ad1.0, &n_ad2.0, LABEL_MAC]);
    Ok(SessionKeys {
        k_dh: k_dh.to_vec(),
        k_e,
        k_a,
    })
}
