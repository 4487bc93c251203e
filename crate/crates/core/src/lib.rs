//! Anomalous sound detection toolkit: self-supervised domain-adaptive
//! pre-training of a patch-transformer encoder, Ward-linkage pseudo
//! attributes for machines without attribute labels, ArcFace attribute
//! classification fine-tuning, KNN scoring and AUC/pAUC evaluation.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod finetune;
pub mod frontend;
pub mod metrics;
pub mod nn;
pub mod pretrain;
pub mod pseudolabel;

pub use error::{Error, Result};
