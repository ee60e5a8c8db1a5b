//! QA evaluation: text-overlap metrics, corpus reports, significance
//! testing, and the error taxonomy.

mod errors;
mod report;
mod text;
mod ttest;

pub use errors::*;
pub use report::*;
pub use text::*;
pub use ttest::*;
