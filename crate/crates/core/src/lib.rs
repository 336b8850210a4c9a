//! Federated XGBoost training over a hybrid homomorphic-encryption and
//! secret-sharing secure aggregation protocol.
//!
//! The crate is organised bottom-up:
//!
//! * [`group_math`], [`bresson`], [`shamir`], [`transport`] and [`codec`] are
//!   the cryptographic and numeric primitives;
//! * [`secagg`] masks, aggregates and unmasks user vectors, tolerating dropout;
//! * [`xgboost`] holds the plaintext boosting mathematics and the centralized
//!   trainer used as an oracle;
//! * [`fed`] runs the users and the server as message-passing state machines
//!   over the in-memory bus in [`simnet`];
//! * [`data_io`] loads and partitions datasets.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub mod bresson;
pub mod codec;
pub mod data_io;
pub mod error;
pub mod fed;
pub mod group_math;
pub mod secagg;
pub mod shamir;
pub mod simnet;
pub mod transport;
pub mod xgboost;

pub use error::{Error, Result};

/// Index of a user. Users are labelled `1..=n`; the index doubles as the
/// Shamir evaluation point of the shares the user holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId(pub u32);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{}", self.0)
    }
}

/// Deterministic RNG for a seed.
pub fn seeded_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Independent deterministic RNG stream derived from a seed and a label, so
/// that consumers drawing from different streams never perturb each other.
pub fn stream_rng(seed: u64, label: &str) -> ChaCha20Rng {
    let digest = Sha256::new()
        .chain_update(b"fedxgb-stream")
        .chain_update(seed.to_be_bytes())
        .chain_update(label.as_bytes())
        .finalize();
    ChaCha20Rng::from_seed(digest.into())
}
