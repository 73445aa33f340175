//! Unsupervised active-speaker detection by cross-modal identity matching.
//!
//! Speech segments and face tracks each carry an identity embedding. For a
//! set of segments, the pairwise cosine distances of the speech embeddings
//! form one matrix; picking one overlapping face track per segment forms a
//! second. The solver picks faces so that each row of the face matrix
//! correlates as strongly as possible with the matching speech row, then
//! drops assignments whose row correlation stays low (off-screen speakers).
//!
//! Modules:
//! - [`types`] and [`io`]: validated inputs and JSON-Lines formats
//! - [`preprocess`]: voice-activity regions to short segments
//! - [`identity`]: distance matrices and the correlation objective
//! - [`solver`]: partitioned coordinate ascent with pins
//! - [`offscreen`]: threshold-based off-screen correction
//! - [`eval`]: F1, AP/mAP, ROC and Mann-Whitney U
//! - [`synth`]: synthetic scenarios and the exhaustive oracle
//! - [`pipeline`]: end-to-end runs used by the CLI and the C ABI

pub mod error;
pub mod eval;
pub mod identity;
pub mod io;
pub mod offscreen;
pub mod pipeline;
pub mod preprocess;
pub mod solver;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use identity::{corr_objective, cosine_distance, row_pearson, DiagonalPolicy, DistanceMatrix};
pub use solver::{AssignmentState, PinSet, SolverConfig};
pub use types::{CandidateMap, Choice, EmbeddingVector, FaceTrack, GroundTruth, SpeechSegment, TimeInterval};
