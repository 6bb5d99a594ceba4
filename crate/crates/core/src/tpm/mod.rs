//! Software TPM: a PCR bank, the measured boot sequence and AIK-signed
//! quotes.
//!
//! The emulator is an oracle for the rest of the system, not a
//! tamper-resistant device. Registers change only through
//! [`PcrBank::extend`] (or a full [`PcrBank::reset`], which models a cold
//! restart).

mod manifest;
mod quote;

pub use manifest::{BootComponent, BootManifest, ComponentKind, ManifestError};
pub use quote::{verify_quote, GoldenValues, Quote, TrustVerdict};

use thiserror::Error;

use crate::crypto::{hash, hash_parts, Digest, SignatureKeyPair, VerificationKey};

pub const PCR_COUNT: usize = 24;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TpmError {
    #[error("PCR index {0} out of range (0..{PCR_COUNT})")]
    IndexOutOfRange(usize),
    #[error("boot requires a freshly reset PCR bank")]
    NotReset,
    #[error("quote needs at least one PCR index")]
    EmptySelection,
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtendEvent {
    pub index: usize,
    pub measurement: Vec<u8>,
}

#[derive(Clone)]
pub struct PcrBank {
    registers: [Digest; PCR_COUNT],
    aik: SignatureKeyPair,
    log: Vec<ExtendEvent>,
}

impl std::fmt::Debug for PcrBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PcrBank")
            .field("extends", &self.log.len())
            .field("aik", &self.aik)
            .finish()
    }
}

impl PcrBank {
    pub fn new(aik: SignatureKeyPair) -> Self {
        PcrBank {
            registers: [Digest::ZERO; PCR_COUNT],
            aik,
            log: Vec::new(),
        }
    }

    /// `PCR[index] := H(PCR[index] || measurement)`.
    pub fn extend(&mut self, index: usize, measurement: &[u8]) -> Result<Digest, TpmError> {
        let reg = self
            .registers
            .get_mut(index)
            .ok_or(TpmError::IndexOutOfRange(index))?;
        *reg = hash_parts(&[reg.as_bytes(), measurement]);
        self.log.push(ExtendEvent {
            index,
            measurement: measurement.to_vec(),
        });
        Ok(*reg)
    }

    pub fn register(&self, index: usize) -> Result<Digest, TpmError> {
        self.registers
            .get(index)
            .copied()
            .ok_or(TpmError::IndexOutOfRange(index))
    }

    pub fn registers(&self) -> &[Digest; PCR_COUNT] {
        &self.registers
    }

    pub fn extend_log(&self) -> &[ExtendEvent] {
        &self.log
    }

    pub fn is_reset(&self) -> bool {
        self.log.is_empty()
    }

    /// Cold restart: all registers back to zero.
    pub fn reset(&mut self) {
        self.registers = [Digest::ZERO; PCR_COUNT];
        self.log.clear();
    }

    /// Measures each component in order into its register.
    pub fn boot(&mut self, manifest: &BootManifest) -> Result<(), TpmError> {
        if !self.is_reset() {
            return Err(TpmError::NotReset);
        }
        manifest.validate()?;
        for c in manifest.components() {
            self.extend(c.pcr_index, hash(&c.image).as_bytes())?;
        }
        Ok(())
    }

    /// The AIK itself. Only provisioning and the simulator's key-leak
    /// scenarios need it.
    pub fn aik(&self) -> &SignatureKeyPair {
        &self.aik
    }

    pub fn aik_public(&self) -> VerificationKey {
        self.aik.verification_key()
    }

    pub fn quote(&self, indices: &[usize], qualifying_data: &[u8]) -> Result<Quote, TpmError> {
        if indices.is_empty() {
            return Err(TpmError::EmptySelection);
        }
        let mut pcr_values = Vec::with_capacity(indices.len());
        for &i in indices {
            pcr_values.push((pcr_index_u8(i)?, self.register(i)?));
        }
        Ok(Quote::sign(pcr_values, qualifying_data.to_vec(), &self.aik))
    }

    /// Current values at `indices`, for provisioning a verifier.
    pub fn golden(&self, indices: &[usize]) -> Result<GoldenValues, TpmError> {
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            out.push((pcr_index_u8(i)?, self.register(i)?));
        }
        Ok(GoldenValues::new(out))
    }
}

fn pcr_index_u8(i: usize) -> Result<u8, TpmError> {
    if i < PCR_COUNT {
        Ok(i as u8)
    } else {
        Err(TpmError::IndexOutOfRange(i))
    }
}
