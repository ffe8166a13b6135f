//! Ad-hoc group formation for group recommender systems.
//!
//! A propagation-only graph encoder over a user–user similarity graph is
//! trained jointly with a rating autoencoder, a Student's-t clustering
//! objective with a randomly resampled cluster count, and two contrastive
//! losses. At inference time the fused user embeddings are partitioned into
//! any requested number of groups by K-Means alone, without retraining.
//!
//! The crate also carries the evaluation harness: group aggregation
//! strategies, classical grouping baselines, ranking metrics and a timing
//! bench.

#[cfg(feature = "cli")]
pub mod cli;
pub mod cluster;
pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod formation;
pub mod graph;
pub mod grouprec;
pub mod ingest;
pub mod sparse;
pub mod synth;
pub mod trainer;
mod binio;
mod par;

pub use error::{Error, Result};

/// Seeded generator used everywhere randomness is needed.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the generator for `(seed, stream)`; independent streams keep
/// per-epoch draws reproducible without carrying generator state around.
pub fn seeded_rng(seed: u64, stream: u64) -> Rng {
    use rand::SeedableRng;
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
