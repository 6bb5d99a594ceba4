//! Cryptographic building blocks for the handshake.
//!
//! Everything here is a pure function of its inputs plus an entropy source
//! passed in by the caller, so the same code serves production runs (OS
//! entropy) and the deterministic simulator (seeded ChaCha).

mod dh;
mod envelope;
mod hash;
mod kdf;
mod sig;

pub use dh::{compute_shared_secret, generate_dh_keypair, DhGroup, DhKeyPair};
pub use envelope::{open, seal, SealedEnvelope, BLOCK_LEN, IV_LEN, TAG_LEN};
pub use hash::{hash, hash_parts, Digest, DIGEST_LEN};
pub(crate) use kdf::key_fingerprint;
pub use kdf::{derive_session_keys, keyed_hash, Nonce, SessionKeys, KEY_LEN, NONCE_LEN};
pub use sig::{Signature, SignatureKeyPair, VerificationKey};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    /// Public exponential outside `(1, p - 1)`.
    #[error("degenerate Diffie-Hellman exponential")]
    DegenerateExponential,
    #[error("exponential encoding is {actual} bytes, group width is {expected}")]
    ExponentialWidth { expected: usize, actual: usize },
    #[error("shared secret is empty")]
    EmptySharedSecret,
    #[error("envelope integrity check failed")]
    Integrity,
    #[error("malformed envelope: {0}")]
    MalformedEnvelope(&'static str),
    #[error("invalid key material: {0}")]
    KeyMaterial(String),
}
