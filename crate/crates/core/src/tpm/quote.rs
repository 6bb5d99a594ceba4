use crate::crypto::{hash_parts, Digest, Signature, SignatureKeyPair, VerificationKey};

use super::TpmError;

/// AIK-signed report of selected PCR values plus caller freshness data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quote {
    pub pcr_values: Vec<(u8, Digest)>,
    pub qualifying_data: Vec<u8>,
    pub signature: Signature,
}

impl Quote {
    /// `count:u8 || (index:u8 || digest[32])*`
    pub fn encode_pcr_values(values: &[(u8, Digest)]) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + values.len() * 33);
        out.push(values.len() as u8);
        for (i, d) in values {
            out.push(*i);
            out.extend_from_slice(d.as_bytes());
        }
        out
    }

    /// The digest the AIK signs: `H(encoded pcr_values || qualifying_data)`.
    pub fn signed_digest(values: &[(u8, Digest)], qualifying_data: &[u8]) -> Digest {
        hash_parts(&[&Self::encode_pcr_values(values), qualifying_data])
    }

    pub fn sign(pcr_values: Vec<(u8, Digest)>, qualifying_data: Vec<u8>, aik: &SignatureKeyPair) -> Self {
        let digest = Self::signed_digest(&pcr_values, &qualifying_data);
        Quote {
            signature: aik.sign(digest.as_bytes()),
            pcr_values,
            qualifying_data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrustVerdict {
    Trusted,
    SignatureInvalid,
    /// Qualifying data differs from what the verifier expected.
    Stale,
    /// First index whose value (or presence) differs from the golden set.
    StateMismatch { index: u8 },
}

/// Golden (trusted-state) PCR values for a peer, sorted by index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GoldenValues(Vec<(u8, Digest)>);

impl GoldenValues {
    pub fn new(mut entries: Vec<(u8, Digest)>) -> Self {
        entries.sort_by_key(|(i, _)| *i);
        entries.dedup_by_key(|(i, _)| *i);
        GoldenValues(entries)
    }

    pub fn entries(&self) -> &[(u8, Digest)] {
        &self.0
    }

    pub fn entries_mut(&mut self) -> &mut [(u8, Digest)] {
        &mut self.0
    }

    pub fn indices(&self) -> Vec<u8> {
        self.0.iter().map(|(i, _)| *i).collect()
    }

    pub fn get(&self, index: u8) -> Option<&Digest> {
        self.0.iter().find(|(i, _)| *i == index).map(|(_, d)| d)
    }

    /// `["0:<hex>", "1:<hex>", ...]`
    pub fn to_hex_list(&self) -> Vec<String> {
        self.0.iter().map(|(i, d)| format!("{i}:{}", d.to_hex())).collect()
    }

    pub fn from_hex_list<S: AsRef<str>>(items: &[S]) -> Result<Self, TpmError> {
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            let item = item.as_ref();
            let bad = || TpmError::Manifest(super::ManifestError::Golden(item.to_string()));
            let (idx, hex) = item.split_once(':').ok_or_else(bad)?;
            let idx: usize = idx.trim().parse().map_err(|_| bad())?;
            if idx >= super::PCR_COUNT {
                return Err(TpmError::IndexOutOfRange(idx));
            }
            if out.iter().any(|(i, _)| *i as usize == idx) {
                return Err(bad());
            }
            out.push((idx as u8, Digest::from_hex(hex).map_err(|_| bad())?));
        }
        Ok(GoldenValues::new(out))
    }
}

/// Checks signature, then freshness, then every value against the golden
/// set. The quoted index set must equal the golden index set.
pub fn verify_quote(
    quote: &Quote,
    aik_public: &VerificationKey,
    expected_qualifying_data: &[u8],
    golden: &GoldenValues,
) -> TrustVerdict {
    let digest = Quote::signed_digest(&quote.pcr_values, &quote.qualifying_data);
    if !aik_public.verify(digest.as_bytes(), &quote.signature) {
        return TrustVerdict::SignatureInvalid;
    }
    if quote.qualifying_data != expected_qualifying_data {
        return TrustVerdict::Stale;
    }
    for (index, value) in &quote.pcr_values {
        if golden.get(*index) != Some(value) {
            return TrustVerdict::StateMismatch { index: *index };
        }
    }
    for (index, _) in golden.entries() {
        if !quote.pcr_values.iter().any(|(i, _)| i == index) {
            return TrustVerdict::StateMismatch { index: *index };
        }
    }
    TrustVerdict::Trusted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;

    #[test]
    fn golden_hex_round_trip() {
        let g = GoldenValues::new(vec![(5, hash(b"b")), (0, hash(b"a"))]);
        assert_eq!(g.indices(), vec![0, 5]);
        let list = g.to_hex_list();
        assert!(list[0].starts_with("0:"));
        assert_eq!(GoldenValues::from_hex_list(&list).unwrap(), g);
    }

    #[test]
    fn golden_parse_errors() {
        assert!(GoldenValues::from_hex_list(&["nocolon"]).is_err());
        assert!(GoldenValues::from_hex_list(&["24:00"]).is_err());
        let d = hash(b"x").to_hex();
        assert!(GoldenValues::from_hex_list(&[format!("1:{d}"), format!("1:{d}")]).is_err());
        assert!(GoldenValues::from_hex_list(&["1:abcd"]).is_err());
    }
}
