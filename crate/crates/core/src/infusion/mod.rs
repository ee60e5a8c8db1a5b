//! Entity-embedding infusion: prompt assembly, the two training stages and
//! the text-only baseline, checkpoints, and evaluation.

mod checkpoint;
mod predict;
mod prompt;
mod train;

pub use checkpoint::*;
pub use predict::*;
pub use prompt::*;
pub use train::*;
