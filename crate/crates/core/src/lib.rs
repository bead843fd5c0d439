//! Named-entity correction for ASR transcripts.
//!
//! Corrupted entity spans are detected on the top-1 hypothesis, candidate
//! entities are retrieved by syllable-level edit distance, re-ranked with
//! context/description embeddings, and each replacement is gated by how
//! well it agrees with the rest of the n-best list.

pub mod align;
pub mod corrector;
pub mod detection;
pub mod entity_store;
pub mod error;
pub mod evaluation;
pub mod phonetics;
pub mod records;
pub mod semantic;
pub mod synthetic;

pub use error::{NecError, Result};
