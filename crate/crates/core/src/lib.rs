//! Membership inference against contrastively pre-trained image encoders.
//!
//! The pipeline: pre-train a target and shadow encoders ([`contrastive`]),
//! query them through a uniform black-box interface ([`encoder`]), turn the
//! pairwise similarities of augmented views into membership features
//! ([`membership`]), fit inference classifiers on shadow data
//! ([`classifiers`]) and score them against the target ([`eval`]).

pub mod baselines;
pub mod classifiers;
pub mod contrastive;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod membership;
pub mod rng;

pub use error::{Error, Result};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Short stable hex digest of a value's JSON form.
pub fn json_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("value serializes to JSON");
    hex::encode(&Sha256::digest(json)[..8])
}
