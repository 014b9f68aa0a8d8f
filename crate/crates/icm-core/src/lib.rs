//! Unsupervised label elicitation by internal coherence maximization.
//!
//! Searches for label assignments over a claim-verification dataset that
//! jointly maximize mutual predictability under a pluggable scorer and
//! logical consistency under explicit forbidden-tuple constraints. The crate
//! is `no_std` + `alloc`; IO, file formats, and the CLI live in the
//! companion `icm-pipeline` crate.

#![no_std]

extern crate alloc;

pub mod consistency;
pub mod datasets;
pub mod eval;
pub mod model;
pub mod planted;
pub mod scorer;
pub mod search;

pub use model::{
    validate_dataset, AnnealingConfig, ConsistencyConstraint, ConstraintKind, Dataset, Example,
    LabelAssignment, Provenance, ScoreBreakdown, TaskKind, Violation,
};
pub use scorer::{
    build_context, mutual_predictability, score_label, CachedBackend, ScoreError, ScorerBackend,
    ScoringContext, SyntheticScorer,
};
pub use search::{run_icm, SearchError, SearchTrace};
