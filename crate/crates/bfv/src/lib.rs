//! RNS variant of the BFV scheme with SIMD batching.
//!
//! Multiplication uses the HPS lift/scale approach; relinearization uses one
//! special prime. Everything needed by the membership protocol lives here,
//! nothing else.

mod context;
pub mod modulus;
pub mod ntt;
mod par;
pub mod params;
pub mod rns;
mod sample;
mod types;

pub use context::HeContext;
pub use params::{HeParams, Profile};
pub use sample::uniform_below;
pub use types::{Cipher, KeyMaterial, PlainVec, Plaintext, PublicKey, RelinKey, SecretKey, ServerKeys, FORMAT_VERSION};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum HeError {
    #[error("unsupported polynomial degree {0}")]
    UnsupportedDegree(usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("object was created under different parameters")]
    ContextMismatch,
    #[error("level mismatch: {0} vs {1}")]
    LevelMismatch(usize, usize),
    #[error("expected {expected} slots, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("plaintext value {0} is not below the plain modulus")]
    PlainOutOfRange(u64),
    #[error("malformed encoding: {0}")]
    Serialization(String),
}
