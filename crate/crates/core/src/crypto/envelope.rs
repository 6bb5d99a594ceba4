//! Encrypt-then-MAC envelope: AES-256-CBC with a random IV, then
//! HMAC-SHA-256 over `iv || ciphertext` under the MAC key.
//!
//! Encoded layout: `iv[16] || u32 ciphertext_len (BE) || ciphertext || tag[32]`.

use aes::cipher::{block_padding::Pkcs7, BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha2::Sha256;

use super::{CryptoError, SessionKeys};

pub const IV_LEN: usize = 16;
pub const TAG_LEN: usize = 32;
pub const BLOCK_LEN: usize = 16;

type Aes256CbcEnc = cbc::Encryptor<aes::Aes256>;
type Aes256CbcDec = cbc::Decryptor<aes::Aes256>;
type HmacSha256 = Hmac<Sha256>;

#[derive(Clone, PartialEq, Eq)]
pub struct SealedEnvelope {
    pub iv: [u8; IV_LEN],
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl std::fmt::Debug for SealedEnvelope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SealedEnvelope")
            .field("ciphertext_len", &self.ciphertext.len())
            .finish_non_exhaustive()
    }
}

impl SealedEnvelope {
    pub fn encoded_len(&self) -> usize {
        IV_LEN + 4 + self.ciphertext.len() + TAG_LEN
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.iv);
        out.extend_from_slice(&(self.ciphertext.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < IV_LEN + 4 + TAG_LEN {
            return Err(CryptoError::MalformedEnvelope("truncated"));
        }
        let iv: [u8; IV_LEN] = bytes[..IV_LEN].try_into().unwrap();
        let ct_len = u32::from_be_bytes(bytes[IV_LEN..IV_LEN + 4].try_into().unwrap()) as usize;
        let body = &bytes[IV_LEN + 4..];
        if body.len() != ct_len.saturating_add(TAG_LEN) {
            return Err(CryptoError::MalformedEnvelope("length mismatch"));
        }
        if ct_len == 0 || !ct_len.is_multiple_of(BLOCK_LEN) {
            return Err(CryptoError::MalformedEnvelope("ciphertext not block aligned"));
        }
        Ok(SealedEnvelope {
            iv,
            ciphertext: body[..ct_len].to_vec(),
            tag: body[ct_len..].try_into().unwrap(),
        })
    }
}

fn mac_over(keys: &SessionKeys, iv: &[u8], ciphertext: &[u8]) -> HmacSha256 {
    let mut mac = HmacSha256::new_from_slice(keys.mac_key()).expect("32-byte key");
    mac.update(iv);
    mac.update(ciphertext);
    mac
}

pub fn seal<R: RngCore + CryptoRng>(message: &[u8], keys: &SessionKeys, rng: &mut R) -> SealedEnvelope {
    let mut iv = [0u8; IV_LEN];
    rng.fill_bytes(&mut iv);
    let ciphertext = Aes256CbcEnc::new(keys.encryption_key().into(), &iv.into())
        .encrypt_padded_vec_mut::<Pkcs7>(message);
    let tag = mac_over(keys, &iv, &ciphertext).finalize().into_bytes().into();
    SealedEnvelope { iv, ciphertext, tag }
}

/// Verifies the tag (constant time) before any decryption happens.
pub fn open(envelope: &SealedEnvelope, keys: &SessionKeys) -> Result<Vec<u8>, CryptoError> {
    if envelope.ciphertext.is_empty() || !envelope.ciphertext.len().is_multiple_of(BLOCK_LEN) {
        return Err(CryptoError::MalformedEnvelope("ciphertext not block aligned"));
    }
    mac_over(keys, &envelope.iv, &envelope.ciphertext)
        .verify_slice(&envelope.tag)
        .map_err(|_| CryptoError::Integrity)?;
    Aes256CbcDec::new(keys.encryption_key().into(), &envelope.iv.into())
        .decrypt_padded_vec_mut::<Pkcs7>(&envelope.ciphertext)
        // Only reachable with a valid tag, i.e. a sender holding both keys.
        .map_err(|_| CryptoError::MalformedEnvelope("bad padding"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{derive_session_keys, Nonce};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn keys(seed: u8) -> SessionKeys {
        derive_session_keys(&[seed; 64], &Nonce([1; 32]), &Nonce([2; 32])).unwrap()
    }

    #[test]
    fn round_trip_at_block_boundaries() {
        let k = keys(1);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for len in [0, 1, BLOCK_LEN - 1, BLOCK_LEN, BLOCK_LEN + 1, 64 * 1024] {
            let msg: Vec<u8> = (0..len).map(|i| i as u8).collect();
            let env = seal(&msg, &k, &mut rng);
            let decoded = SealedEnvelope::from_bytes(&env.to_bytes()).unwrap();
            assert_eq!(open(&decoded, &k).unwrap(), msg, "len {len}");
        }
    }

    #[test]
    fn every_single_bit_flip_rejected() {
        let k = keys(2);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let bytes = seal(b"attestation payload", &k, &mut rng).to_bytes();
        for bit in 0..bytes.len() * 8 {
            let mut b = bytes.clone();
            b[bit / 8] ^= 1 << (bit % 8);
            let rejected = match SealedEnvelope::from_bytes(&b) {
                Err(_) => true,
                Ok(env) => matches!(open(&env, &k), Err(CryptoError::Integrity)),
            };
            assert!(rejected, "bit {bit} accepted");
        }
    }

    #[test]
    fn fresh_iv_each_seal() {
        let k = keys(3);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let a = seal(b"same", &k, &mut rng);
        let b = seal(b"same", &k, &mut rng);
        assert_ne!(a.iv, b.iv);
        assert_ne!(a.ciphertext, b.ciphertext);
    }

    #[test]
    fn wrong_keys_and_truncation() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let env = seal(b"m", &keys(4), &mut rng);
        assert_eq!(open(&env, &keys(5)), Err(CryptoError::Integrity));
        let bytes = env.to_bytes();
        assert!(matches!(
            SealedEnvelope::from_bytes(&bytes[..bytes.len() - 1]),
            Err(CryptoError::MalformedEnvelope(_))
        ));
    }
}
