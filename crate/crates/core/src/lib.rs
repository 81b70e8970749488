//! Private membership checks of equipment identifiers against operator
//! block and watch lists.
//!
//! The client sends its identifier as bit-sliced BFV ciphertexts, the
//! operator evaluates an equality circuit against its lists and returns a
//! blinded result, and the client answers with one 64-bit sum per list.

pub mod bench;
pub mod encoding;
pub mod le_hook;
mod par;
pub mod psm;
pub mod registry;
pub mod transport;

pub use par::is_parallel;
pub use peipsm_bfv as he;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("encoding: {0}")]
    Encoding(String),
    #[error("registry: {0}")]
    Registry(String),
    #[error("line {line}: {msg}")]
    ListFile { line: usize, msg: String },
    #[error("parameters: {0}")]
    Params(String),
    #[error(transparent)]
    He(#[from] peipsm_bfv::HeError),
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("wire: {0}")]
    Wire(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("io: {0}")]
    Io(String),
}
