//! Edge-cloud model cascading with conformal alignment.
//!
//! An edge model emits prediction sets; a test input stays on the edge when
//! its set is predicted to carry at least `1 - alpha` of the cloud model's
//! probability mass. Selection runs a screening procedure over a labelled
//! validation split so that the false discovery rate among kept inputs is at
//! most `delta`. Everything else is deferred to the cloud.
//!
//! Modules follow the pipeline: [`domain`] types, [`predsets`] for edge
//! sets, [`alignment`] scores and predictors, [`cascade`] routing,
//! [`metrics`], plus [`synth`] and [`ingest`] for data and [`harness`] for
//! experiments.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod cascade;
pub mod domain;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod predsets;
pub mod synth;

pub use domain::{
    Categorical, DataPartition, Example, LabelSpace, PartitionSizes, PredictionSet, RiskSpec,
};
pub use error::{Error, Result};
