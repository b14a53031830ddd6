//! HTTP service that hands out blind A/B duration comparisons to
//! annotators and turns their choices into preference pairs.
//!
//! State lives in a single append-only JSONL log; the in-memory view is
//! rebuilt by replaying it on start. Assignments are not logged, so a
//! restart returns every assigned task to the pool.

mod error;
mod server;
mod store;
mod types;

pub use error::{AnnotateError, Result};
pub use server::{router, serve};
pub use store::{Store, StoreConfig};
pub use types::{
    Candidate, Choice, ImportReport, Judgment, Rejection, Rendition, Side, TaskStatus, TaskView, GUIDELINES,
};
