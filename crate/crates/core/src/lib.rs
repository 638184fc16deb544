//! Screening engine for early-stage grant awardees.
//!
//! The crate turns cleaned grant-award records into a typed company/topic/agency
//! graph, derives leak-free progression labels, and trains attention-based
//! (heterogeneous graph transformer), relational-convolution and tabular models
//! on it with a small reverse-mode differentiation engine. Ranking metrics and a
//! synthetic corpus generator with planted relational signal round it out.
//!
//! Everything here is `no_std` + `alloc`. File formats, the command line and
//! wall-clock timing live in the `grantgraph` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod error;
#[cfg(test)]
mod fixtures;
pub mod graph;
pub mod ingest;
pub mod labels;
mod math;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
