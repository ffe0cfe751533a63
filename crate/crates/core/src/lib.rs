//! Collaborative-aware mixed exercise sampling (CMES) for cognitive diagnosis.
//!
//! The crate augments a student's response log with synthetic "mixed"
//! exercises. Candidate exercises come from other student clusters and avoid
//! the student's practised concepts; they are blended with an answered
//! exercise by self-attention, labelled by a ranking-trained copy of the
//! diagnosis model and fed, together with the real log, to a second copy
//! that does the actual diagnosis.
//!
//! Module map:
//!
//! - [`data`]: loading, filtering, splitting, synthetic populations, profiles
//! - [`cluster`]: student featurization and k-means
//! - [`sampler`]: eligible pools, popularity-weighted candidates, attachment
//! - [`mixer`]: embedding table, concept weights, attention mixing
//! - [`model`]: IRT / MIRT / NCD diagnosis functions with manual backprop
//! - [`feedback`]: pairwise ranking loss and pseudo labels
//! - [`train`]: losses, optimizer, epoch loop, checkpoints, gradient checks
//! - [`metrics`]: ACC / RMSE / AUC and mastery recovery

pub mod cluster;
pub mod data;
pub mod error;
pub mod feedback;
pub mod math;
pub mod metrics;
pub mod mixer;
pub mod model;
pub mod params;
pub mod sampler;
pub mod seeding;
pub mod train;

pub use error::{Error, Result};
