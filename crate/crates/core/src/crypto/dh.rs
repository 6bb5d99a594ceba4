use num_bigint::{BigUint, RandBigInt};
use num_traits::One;
use rand::{CryptoRng, RngCore};
use zeroize::Zeroizing;

use super::CryptoError;

// RFC 3526, group 14.
const MODP_2048_HEX: &str = "\
FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD1\
29024E088A67CC74020BBEA63B139B22514A08798E3404DD\
EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245\
E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED\
EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3D\
C2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F\
83655D23DCA3AD961C62F356208552BB9ED529077096966D\
670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B\
E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9\
DE2BCBF6955817183995497CEA956AE515D2261898FA0510\
15728E5A8AACAA68FFFFFFFFFFFFFFFF";

// RFC 2409, second Oakley group.
const MODP_1024_HEX: &str = "\
FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD1\
29024E088A67CC74020BBEA63B139B22514A08798E3404DD\
EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245\
E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED\
EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE65381\
FFFFFFFFFFFFFFFF";

const EXPONENT_BITS: u64 = 256;

/// A fixed, named MODP group. Groups cannot be built from arbitrary
/// parameters outside of tests, so no runtime validation is needed.
#[derive(Clone, PartialEq, Eq)]
pub struct DhGroup {
    name: &'static str,
    modulus: BigUint,
    generator: BigUint,
    exponent_bits: u64,
    width: usize,
}

impl std::fmt::Debug for DhGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DhGroup")
            .field("name", &self.name)
            .field("bits", &self.modulus.bits())
            .field("exponent_bits", &self.exponent_bits)
            .finish()
    }
}

impl DhGroup {
    fn named(name: &'static str, hex_modulus: &str) -> Self {
        let modulus = BigUint::parse_bytes(hex_modulus.as_bytes(), 16).expect("constant modulus");
        let width = modulus.bits().div_ceil(8) as usize;
        DhGroup {
            name,
            modulus,
            generator: BigUint::from(2u32),
            exponent_bits: EXPONENT_BITS,
            width,
        }
    }

    pub fn modp2048() -> Self {
        Self::named("modp2048", MODP_2048_HEX)
    }

    pub fn modp1024() -> Self {
        Self::named("modp1024", MODP_1024_HEX)
    }

    #[cfg(test)]
    pub(crate) fn toy(modulus: u64, generator: u64, exponent_bits: u64) -> Self {
        let modulus = BigUint::from(modulus);
        let width = modulus.bits().div_ceil(8) as usize;
        DhGroup {
            name: "toy",
            modulus,
            generator: BigUint::from(generator),
            exponent_bits,
            width,
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    pub fn generator(&self) -> &BigUint {
        &self.generator
    }

    pub fn exponent_bits(&self) -> u64 {
        self.exponent_bits
    }

    /// Byte width of every encoded group element.
    pub fn width(&self) -> usize {
        self.width
    }

    /// True when `1 < value < p - 1`.
    pub fn is_valid_public(&self, value: &BigUint) -> bool {
        let upper = &self.modulus - BigUint::one();
        *value > BigUint::one() && *value < upper
    }

    /// Big-endian, left-padded to the modulus width.
    pub fn encode(&self, value: &BigUint) -> Vec<u8> {
        let raw = value.to_bytes_be();
        let mut out = vec![0u8; self.width.saturating_sub(raw.len())];
        out.extend_from_slice(&raw);
        out
    }

    pub fn decode(&self, bytes: &[u8]) -> Result<BigUint, CryptoError> {
        if bytes.len() != self.width {
            return Err(CryptoError::ExponentialWidth {
                expected: self.width,
                actual: bytes.len(),
            });
        }
        Ok(BigUint::from_bytes_be(bytes))
    }

    /// Decodes a peer exponential and rejects `0`, `1` and `p - 1`.
    pub fn decode_public(&self, bytes: &[u8]) -> Result<BigUint, CryptoError> {
        let value = self.decode(bytes)?;
        if !self.is_valid_public(&value) {
            return Err(CryptoError::DegenerateExponential);
        }
        Ok(value)
    }
}

/// Ephemeral key pair. The secret is kept only as long as the handshake
/// needs it.
#[derive(Clone)]
pub struct DhKeyPair {
    secret: BigUint,
    public: BigUint,
}

impl std::fmt::Debug for DhKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DhKeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl DhKeyPair {
    /// Builds a key pair from a known exponent. Used by the simulator's
    /// adversary and by test oracles.
    pub fn from_secret(group: &DhGroup, secret: BigUint) -> Result<Self, CryptoError> {
        let public = group.generator.modpow(&secret, &group.modulus);
        if !group.is_valid_public(&public) {
            return Err(CryptoError::DegenerateExponential);
        }
        Ok(DhKeyPair { secret, public })
    }

    pub fn secret_exponent(&self) -> &BigUint {
        &self.secret
    }

    pub fn public_exponential(&self) -> &BigUint {
        &self.public
    }
}

/// Fresh key pair with the secret drawn uniformly from
/// `[2^(bits-1), 2^bits)`.
pub fn generate_dh_keypair<R: RngCore + CryptoRng>(group: &DhGroup, rng: &mut R) -> DhKeyPair {
    loop {
        let mut secret = rng.gen_biguint(group.exponent_bits);
        secret.set_bit(group.exponent_bits - 1, true);
        if let Ok(kp) = DhKeyPair::from_secret(group, secret) {
            return kp;
        }
    }
}

/// `peer^secret mod p`, encoded at the group width.
pub fn compute_shared_secret(
    own: &DhKeyPair,
    peer_exponential: &BigUint,
    group: &DhGroup,
) -> Result<Zeroizing<Vec<u8>>, CryptoError> {
    if !group.is_valid_public(peer_exponential) {
        return Err(CryptoError::DegenerateExponential);
    }
    let shared = peer_exponential.modpow(&own.secret, &group.modulus);
    Ok(Zeroizing::new(group.encode(&shared)))
}
