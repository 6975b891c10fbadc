//! Online selective annotation.
//!
//! For every unlabeled sample the engine keeps a fused belief built from two
//! views: the current model's prediction and a confidence-weighted vote of
//! already annotated neighbors in embedding space. The expected gain of
//! annotating a sample is the annotator's confidence minus the fused
//! confidence. Batches are drawn proportionally to gain, each new label
//! triggers a recheck of its neighborhood, and selection stops once the
//! largest remaining gain falls below a threshold.

mod bytes;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod formats;
pub mod fusion;
pub mod index;
pub mod model;
pub mod session;
pub mod sim;
pub mod vector;

pub use engine::{Engine, EngineConfig, Event, Status};
pub use error::{Error, Result};
pub use formats::{EmbeddingFile, LabelFile};
pub use fusion::{FusionConfig, FusionVariant, GainMode, PredictionState, Source};
pub use index::{IndexConfig, NeighborHit, SearchMode, VectorIndex};
pub use vector::EmbeddingVector;
