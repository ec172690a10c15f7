//! Post-hoc reliability toolkit for classifier outputs.
//!
//! Everything here operates on logits (or penultimate features plus a linear
//! head) produced by some external classifier:
//!
//! * [`prob`]: stable softmax, log-sum-exp and ranking.
//! * [`conformal`]: split conformal prediction sets with marginal coverage.
//! * [`ood`]: energy scores and fold-averaged threshold calibration.
//! * [`longtail`]: per-class diagnosis, few/medium/many splits and head
//!   recomposition from strong donor classes.
//! * [`metrics`]: top-k, mean-per-class accuracy and histograms.
//! * [`backend`]: file formats and a seeded synthetic generator.

pub mod backend;
pub mod conformal;
mod error;
pub mod longtail;
pub mod metrics;
pub mod ood;
pub mod prob;
pub mod table;
pub mod taxonomy;

pub use error::{Error, Result};
pub use prob::{logsumexp, softmax, top_k, ProbVector};
pub use table::{ClassIndexMap, ClassifierHead, FeatureTable, LogitTable, Matrix};
pub use taxonomy::{Rank, TaxonRecord, Taxonomy};

/// Name of the pinned pseudo-random generator used by every seeded routine.
pub const RNG_ALGORITHM: &str = "chacha8";

pub(crate) fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
