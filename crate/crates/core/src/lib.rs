//! Knowledge-graph embedding infusion for a small decoder-only language
//! model.
//!
//! The pipeline trains TransE entity embeddings over a knowledge graph,
//! projects each entity vector into the language model's token-embedding
//! space, splices it into the prompt at a dedicated entity slot, and trains
//! in two stages: projection alignment with the model frozen, then the
//! projection jointly with the output head. A text-only fine-tune serves as
//! the comparison arm, and [`metrics`] scores both.

pub mod error;
pub mod experiment;
pub mod hexfloat;
pub mod infusion;
pub mod kg;
pub mod kge;
pub mod lm;
pub mod metrics;
pub mod par;
pub mod projection;
pub mod qa;

pub use error::{Error, Result};
