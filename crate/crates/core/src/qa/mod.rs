//! QA dataset construction from knowledge graphs.

mod generate;
mod synth;
mod templates;

pub use generate::*;
pub use synth::*;
pub use templates::*;
