//! Blinded two-block reader study: seeded schedule, append-only response
//! log, descriptive statistics and the HTTP API used by the review client.

pub mod definition;
pub mod error;
pub mod http;
pub mod schedule;
pub mod service;
pub mod stats;
pub mod store;

pub use definition::{CaseEntry, StudyDefinition};
pub use error::StudyError;
pub use schedule::{generate_schedule, BlindedItem, Method, ReviewItem};
pub use service::{NextItem, Progress, Study};
pub use stats::{compute_stats, StudyStats};
pub use store::{Identification, ResponseLog, ResponseSubmission, ReviewResponse};
