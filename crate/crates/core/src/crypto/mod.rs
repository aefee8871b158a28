//! Field arithmetic, Shamir sharing, simulated seed agreement, mask expansion
//! and pairwise masking.
//!
//! Seed agreement is a keyed hash of the user pair and a session nonce. It
//! stands in for a Diffie-Hellman exchange: the protocol structure and
//! information flow are modelled, wire cryptography is not.

mod field;
mod masking;
mod prg;
mod quantize;
mod shamir;
pub mod vectors;

use thiserror::Error;

use crate::UserId;

pub use field::{FieldElement, Fp, MODULUS};
pub use masking::mask_input;
pub use prg::{agree_seed, expand_mask, Seed, SEED_LIMBS};
pub use quantize::{Quantizer, DEFAULT_SCALE_BITS, QUANTIZE_HEADROOM};
pub use shamir::{shamir_reconstruct, shamir_share, share_with_coefficients, ShamirShare};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CryptoError {
    #[error("invalid threshold {t} for {k} shares")]
    InvalidThreshold { t: usize, k: usize },
    #[error("need {needed} shares to reconstruct, got {got}")]
    InsufficientShares { needed: usize, got: usize },
    #[error("malformed shares: {0}")]
    MalformedShares(String),
    #[error("user {0} cannot agree a seed with itself")]
    SelfPairing(UserId),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("value {0} exceeds the quantization headroom")]
    QuantizationOverflow(f64),
}
