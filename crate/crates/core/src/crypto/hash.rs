use std::fmt;

use sha2::{Digest as _, Sha256};

use super::CryptoError;

pub const DIGEST_LEN: usize = 32;

/// SHA-256 output. Also the PCR register width.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let bytes = hex::decode(s.trim()).map_err(|e| CryptoError::KeyMaterial(e.to_string()))?;
        let arr: [u8; DIGEST_LEN] = bytes.try_into().map_err(|v: Vec<u8>| {
            CryptoError::KeyMaterial(format!("digest must be {DIGEST_LEN} bytes, got {}", v.len()))
        })?;
        Ok(Digest(arr))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Hash of the concatenation of `parts`, in order.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_matches_published_vector() {
        assert_eq!(
            hash(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn parts_equal_concatenation() {
        assert_eq!(hash_parts(&[b"ab", b"", b"cd"]), hash(b"abcd"));
    }

    #[test]
    fn distinct_inputs_distinct_digests() {
        let corpus: Vec<Vec<u8>> = (0u16..512).map(|i| i.to_be_bytes().to_vec()).collect();
        let mut seen = std::collections::HashSet::new();
        for c in &corpus {
            assert!(seen.insert(hash(c)));
        }
    }

    #[test]
    fn hex_round_trip_and_bad_length() {
        let d = hash(b"x");
        assert_eq!(Digest::from_hex(&d.to_hex()).unwrap(), d);
        assert!(Digest::from_hex("abcd").is_err());
    }
}
