use std::fmt;
use std::str::FromStr;

use rand::{CryptoRng, RngCore};

pub const IDENTITY_LEN: usize = 16;

/// Opaque random device identifier. Carries no information about the
/// device's function; human-readable names stay in local configuration.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeviceIdentity(pub [u8; IDENTITY_LEN]);

impl DeviceIdentity {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut b = [0u8; IDENTITY_LEN];
        rng.fill_bytes(&mut b);
        DeviceIdentity(b)
    }

    pub fn as_bytes(&self) -> &[u8; IDENTITY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for DeviceIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DeviceIdentity({})", self.to_hex())
    }
}

impl fmt::Display for DeviceIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for DeviceIdentity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s.trim()).map_err(|e| format!("identity: {e}"))?;
        let arr: [u8; IDENTITY_LEN] = bytes
            .try_into()
            .map_err(|v: Vec<u8>| format!("identity must be {IDENTITY_LEN} bytes, got {}", v.len()))?;
        Ok(DeviceIdentity(arr))
    }
}
