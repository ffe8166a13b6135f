//! Group recommendation lists from member preferences, and classical
//! grouping baselines.

mod aggregate;
pub mod baselines;
mod gmm;
mod spectral;

pub use aggregate::{
    aggregate, aggregate_avg, aggregate_borda, aggregate_least_misery, candidates, rank,
    CandidatePolicy, NeighborFilled, Preferences, RankedList, Strategy,
};
pub use gmm::{fit_diagonal_gmm, GmmFit};
pub use spectral::spectral_projection;
