//! Contrastive bi-encoder training for paraphrase identification.
//!
//! A trainable projection head sits on top of frozen base sentence
//! embeddings and is fit with an additive-margin softmax loss over
//! in-batch and hard negatives. Hard negatives come from the labelled data
//! and from mining a mega-batch of aggregated mini-batches. Evaluation
//! calibrates a cosine threshold on the dev split and reports accuracy per
//! pair class along with alignment and uniformity of the embedding space.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod mining;
pub mod par;
pub mod trainer;

pub use error::{Error, Result};
