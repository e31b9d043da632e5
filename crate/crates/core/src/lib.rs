//! Core algorithms for class-incremental semantic segmentation scenarios.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. Everything here is pure computation: scenario builders,
//! exemplar memory, pseudo-labeling, metrics and the loss kernel. File
//! formats and the command line live in the `ciss` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod dataset;
pub mod error;
pub mod label;
pub mod losses;
pub mod memory;
pub mod metrics;
pub mod pseudo;
pub mod scenario;
pub mod scores;
pub mod seed;
pub mod synthetic;

pub use dataset::{relabel, DatasetManifest, OracleRecord, TaskSpec};
pub use error::{Error, Result};
pub use label::{ClassId, LabelGrid};
pub use scores::{predict_labels, softmax_probs, Probabilities, ScoreMatrix};
