//! Few-shot example selection for LLM translation.
//!
//! Candidates are shortlisted with BM25 over the example database, described
//! by twelve features and reranked with a learned contextual translation
//! quality (CTQ) regressor.

pub mod corpus;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod features;
pub mod llm_client;
pub mod pipeline;
pub mod prompt;
pub mod regressor;
pub mod retrieval;
pub mod selection;

pub use error::{Error, Result};
