//! Few-shot episode sampling engine and meta-learner testbed.
//!
//! * [`catalog`]: manifest format, validation and split assignment.
//! * [`hierarchy`]: class DAG algorithms (leaf spans, eligibility, split
//!   cuts, LCA height).
//! * [`sampler`]: seeded generation of variable-way, variable-shot,
//!   class-imbalanced episodes.
//! * [`learners`]: a small embedding network with hand-derived gradients and
//!   the episodic and non-episodic learners built on it.
//! * [`eval`]: confidence intervals, tie-aware ranks and binned analyses.

pub mod catalog;
pub mod eval;
pub mod hierarchy;
pub mod learners;
pub mod rng;
pub mod sampler;

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
