//! Secure and trusted channel handshake for avionics wireless networks.
//!
//! The crate is split along the lines of the protocol stack:
//!
//! - [`crypto`]: Diffie-Hellman over a fixed MODP group, the session key
//!   derivation, encrypt-then-MAC envelopes, RSA signatures and hashing.
//! - [`tpm`]: a software TPM with a 24-register PCR bank, the measured boot
//!   sequence and AIK-signed quotes.
//! - [`protocol`]: the wire codec and the initiator/responder state machines
//!   of the three-message handshake.
//! - [`vl`]: per virtual-link key derivation and dual-store persistence of
//!   the master session keys for resumption after a reset.
//! - [`net`]: transports, a deterministic adversarial network simulator and
//!   the latency benchmark.

pub mod crypto;
pub mod net;
pub mod profile;
pub mod protocol;
pub mod tpm;
pub mod vl;

pub use profile::ParamProfile;
