//! Target-dependent sentiment classification with LSTM encoders.
//!
//! Given a sentence and a target span inside it, predict whether the sentence
//! expresses negative, neutral or positive sentiment towards the target. Four
//! classifiers are provided (see [`models`]), all trained from scratch with
//! hand-written reverse-mode gradients and plain SGD.

pub mod cells;
pub mod cli;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod gradcheck;
pub mod mathcore;
pub mod models;
pub mod training;

pub use error::{Error, Result};
