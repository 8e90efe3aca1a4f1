//! Early depression-risk detection from sentence embeddings of user
//! message histories.
//!
//! Annotator vote distributions are recovered into binary, regression and
//! four-class labels; ridge models (optionally PCA-reduced, independent or
//! chained over the four classes) map embeddings to risk estimates; a
//! round-based stream turns those into early decisions scored by ERDE and
//! latency-weighted F1.

pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod labels;
pub mod loss;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod regression;
pub mod stream;
pub mod synth;
