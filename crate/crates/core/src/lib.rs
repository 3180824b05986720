//! Personalized federated dictionary learning.
//!
//! Each site learns a sparse dictionary model of its own data; a one-time
//! signed-permutation alignment makes atom orderings comparable across sites;
//! federated rounds then average only the shared global block of every
//! dictionary while local atoms and all raw data stay on-site. A supervised
//! regression head trained jointly with the codes turns the representation
//! into a per-site classifier.
//!
//! Modules follow the pipeline: [`dl`] holds the per-site update rules,
//! [`alignment`] the cross-site atom matching, [`federation`] the
//! orchestration loop, [`dataio`] synthetic data and file formats, and
//! [`evaluation`] the cross-validation harness.

pub mod alignment;
pub mod dataio;
pub mod dl;
pub mod error;
pub mod evaluation;
pub mod federation;
pub mod types;

#[cfg(test)]
pub(crate) mod test_support;

pub use alignment::{
    apply_signed_permutation, global_alignment, AlignmentGraph, AlignmentOutcome, AlignmentRecord,
    SignedPermutation,
};
pub use error::{Error, Result};
pub use federation::{
    aggregate_global, broadcast_merge, client_local_round, run_pfeddl, ClientState, RoundReport,
    RunOptions, ServerAudit, TrainedFederation,
};
pub use types::{ClassifierWeights, DataMatrix, Dictionary, Hyperparams, Labels, SparseCode};
