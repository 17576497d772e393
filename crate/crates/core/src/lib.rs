//! Candidate selection for generate-then-rank Text-to-SQL.
//!
//! Candidates are executed and grouped by result, groups are ranked by
//! cross-group pairwise preference with a pointwise-utility tie-breaker, and
//! the pool can be replaced by a larger pruned resample when a judge thinks
//! no candidate is correct.

pub mod error;
pub mod eval;
pub mod exec;
pub mod model;
pub mod par;
pub mod rank;
pub mod resample;
pub mod reward;
mod seed;
pub mod select;

pub use error::{BackendError, ConfigError, Error, Result};
pub use model::*;
