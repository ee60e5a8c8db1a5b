//! End-to-end experiments: a JSON configuration, one seed fanned out to
//! every stochastic step, and file artifacts with per-step manifests.

mod config;
mod pipeline;

pub use config::*;
pub use pipeline::*;
