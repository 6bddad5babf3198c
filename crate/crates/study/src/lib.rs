//! HTTP service for the masked-image reader study.
//!
//! The reader only ever sees an opaque item id and pixels; strategy, source
//! image and selection basis stay on the server.

mod api;
mod bundle;
mod error;
mod store;

pub use api::{router, serve, ServeConfig};
pub use bundle::StudyBundle;
pub use error::{Result, StudyError};
pub use store::{LogEntry, NextItem, PhaseProgress, PhaseStatus, Study, LOG_FILE};
