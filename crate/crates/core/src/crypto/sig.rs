use rand::{CryptoRng, RngCore};
use rsa::pkcs1::{DecodeRsaPrivateKey, DecodeRsaPublicKey, EncodeRsaPrivateKey, EncodeRsaPublicKey};
use rsa::pkcs1v15::{Signature as RsaSignature, SigningKey, VerifyingKey};
use rsa::signature::{SignatureEncoding, Signer, Verifier};
use rsa::{RsaPrivateKey, RsaPublicKey};
use sha2::Sha256;
use zeroize::Zeroizing;

use super::{hash, CryptoError};

/// RSASSA-PKCS1-v1_5 with SHA-256.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Signature(pub Vec<u8>);

impl std::fmt::Debug for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Signature({} bytes)", self.0.len())
    }
}

#[derive(Clone)]
pub struct SignatureKeyPair {
    signer: SigningKey<Sha256>,
    public: RsaPublicKey,
}

impl std::fmt::Debug for SignatureKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SignatureKeyPair")
            .field("verification_key", &self.verification_key().fingerprint())
            .finish_non_exhaustive()
    }
}

impl SignatureKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(bits: usize, rng: &mut R) -> Result<Self, CryptoError> {
        let private =
            RsaPrivateKey::new(rng, bits).map_err(|e| CryptoError::KeyMaterial(e.to_string()))?;
        Ok(Self::from_private(private))
    }

    fn from_private(private: RsaPrivateKey) -> Self {
        let public = private.to_public_key();
        SignatureKeyPair {
            signer: SigningKey::<Sha256>::new(private),
            public,
        }
    }

    /// PKCS#1 DER encoding of the private key.
    pub fn to_der(&self) -> Result<Zeroizing<Vec<u8>>, CryptoError> {
        let private: &RsaPrivateKey = self.signer.as_ref();
        let doc = private
            .to_pkcs1_der()
            .map_err(|e| CryptoError::KeyMaterial(e.to_string()))?;
        Ok(Zeroizing::new(doc.as_bytes().to_vec()))
    }

    pub fn from_der(der: &[u8]) -> Result<Self, CryptoError> {
        let private =
            RsaPrivateKey::from_pkcs1_der(der).map_err(|e| CryptoError::KeyMaterial(e.to_string()))?;
        Ok(Self::from_private(private))
    }

    pub fn verification_key(&self) -> VerificationKey {
        VerificationKey(self.public.clone())
    }

    pub fn sign(&self, data: &[u8]) -> Signature {
        let sig: RsaSignature = self.signer.sign(data);
        Signature(sig.to_vec())
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct VerificationKey(RsaPublicKey);

impl std::fmt::Debug for VerificationKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "VerificationKey({})", self.fingerprint())
    }
}

impl VerificationKey {
    pub fn to_der(&self) -> Result<Vec<u8>, CryptoError> {
        self.0
            .to_pkcs1_der()
            .map(|d| d.as_bytes().to_vec())
            .map_err(|e| CryptoError::KeyMaterial(e.to_string()))
    }

    pub fn from_der(der: &[u8]) -> Result<Self, CryptoError> {
        RsaPublicKey::from_pkcs1_der(der)
            .map(VerificationKey)
            .map_err(|e| CryptoError::KeyMaterial(e.to_string()))
    }

    /// Returns false on any mismatch or malformed signature.
    pub fn verify(&self, data: &[u8], sig: &Signature) -> bool {
        let Ok(sig) = RsaSignature::try_from(sig.0.as_slice()) else {
            return false;
        };
        VerifyingKey::<Sha256>::new(self.0.clone())
            .verify(data, &sig)
            .is_ok()
    }

    pub fn fingerprint(&self) -> String {
        let der = self.to_der().unwrap_or_default();
        hex::encode(&hash(&der).0[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn sign_verify_and_rejections() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let a = SignatureKeyPair::generate(1024, &mut rng).unwrap();
        let b = SignatureKeyPair::generate(1024, &mut rng).unwrap();
        let sig = a.sign(b"data");
        assert!(a.verification_key().verify(b"data", &sig));
        assert!(!a.verification_key().verify(b"datA", &sig));
        assert!(!b.verification_key().verify(b"data", &sig));
        assert!(!a.verification_key().verify(b"data", &Signature(vec![1, 2, 3])));
    }

    #[test]
    fn der_round_trip_and_truncation() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let kp = SignatureKeyPair::generate(1024, &mut rng).unwrap();
        let der = kp.to_der().unwrap();
        let back = SignatureKeyPair::from_der(&der).unwrap();
        assert_eq!(back.verification_key(), kp.verification_key());
        assert!(SignatureKeyPair::from_der(&der[..der.len() / 2]).is_err());
        let vder = kp.verification_key().to_der().unwrap();
        assert_eq!(VerificationKey::from_der(&vder).unwrap(), kp.verification_key());
        assert!(VerificationKey::from_der(&vder[..10]).is_err());
    }
}
