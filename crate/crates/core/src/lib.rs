//! Topology-metric learning between vessel center-voxels and multi-source
//! shortest-path-tree reconstruction of labeled vessel trees.
//!
//! The pipeline runs phantom → centers → pairs → embeddings → graph →
//! forest → evaluation; each stage lives in its own module and persists its
//! output in a plain file format so any stage can be rerun in isolation.

pub mod centers;
pub mod embed;
pub mod error;
pub mod eval;
pub mod export;
pub mod io;
pub mod losses;
pub mod metricgraph;
pub mod phantom;
pub mod pipeline;
pub mod recon;
pub mod spatial;
pub mod volume;

pub use error::{Error, ErrorCategory, Result};
