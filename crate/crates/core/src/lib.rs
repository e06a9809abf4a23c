//! Dialogue observer for Motivational Interviewing sessions.
//!
//! Two tasks over a sliding window of the most recent utterances:
//! *categorize* assigns a MISC behavioral code to the latest utterance and
//! *forecast* predicts the code of the utterance that has not been said yet.
//! Models are hierarchical GRU encoders with optional word-level and
//! utterance-level attention, trained with a multiclass focal loss on a
//! small reverse-mode autodiff engine.

pub mod attention;
pub mod config;
pub mod data;
pub mod embed;
pub mod encoders;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
