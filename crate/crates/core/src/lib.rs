//! Network-forensic flow analysis.
//!
//! Stages, in pipeline order:
//!
//! - [`ingest`] / [`snapshot`]: UNSW-NB15-style CSV loading and a checksummed
//!   columnar on-disk format.
//! - [`aggregate`]: group-by flow counts, deduplication, missing-value
//!   filtering, seeded simple random sampling.
//! - [`select`]: chi-square ranking of features against the binary label.
//! - [`detector`]: correntropy-variation scoring with per-flow risk levels.
//! - [`eval`]: accuracy / false alarm rate, per-class accuracy, ROC sweep,
//!   evidence report.
//! - [`pipeline`]: configuration-driven end-to-end runs.

pub mod aggregate;
pub mod detector;
pub mod error;
pub mod eval;
pub mod flow;
pub mod ingest;
pub mod pipeline;
pub mod select;
pub mod snapshot;
pub mod synthetic;

pub use error::{Error, Result};
pub use flow::{Dataset, FeatureSchema, FlowKey, FlowRecord, KeyField, Label};
