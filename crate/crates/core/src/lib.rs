//! Consortium ledger for educational records.
//!
//! Coordinators register certificates and diplomas as hash-chained blocks
//! endorsed by a quorum of pre-selected validators; anyone holding a
//! record's identifier can check that it is authentic and unaltered.

pub mod canonical;
pub mod consensus;
pub mod hash;
pub mod identity;
pub mod ledger;
pub mod model;
pub mod poc;
pub mod records;
pub mod store;

pub use canonical::Value;
pub use hash::{hash_digest, HashDigest};
pub use identity::{IdCard, KeyPair, PublicKey, Role};
pub use ledger::{Block, Chain, Register, RegisterKind, ValidatorKeys};
