//! Life-trajectory activity classification.
//!
//! Triples of (person, time, location) found in biography sentences are classified into
//! 24 activity types. Each sentence is turned into a graph over encoder subword tokens;
//! shortest paths from the triple entities to their nearest verbs select the tokens that
//! are mean-pooled, and the result is fused with a max-pooled sentence embedding.
//! Labeled tuples then feed time-binned and geographic corpus analytics.

pub mod analytics;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod losses;
pub mod manifest;
pub mod ratelimit;
pub mod refine;
pub mod scalar;
pub mod syntax_graph;
pub mod taxonomy;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision model, the default for training and checkpoints.
pub type Model = fusion::FusionModel<f64>;
/// Single-precision model, selected with `--f32`.
pub type ModelF32 = fusion::FusionModel<f32>;
