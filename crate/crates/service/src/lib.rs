//! Study sessions over HTTP.
//!
//! A [`Session`] hands a participant a fixed list of navigation tasks under one
//! condition. Every mutation is an [`Event`] appended to the session's log; the
//! in-memory state is whatever replaying that log produces. [`Store`] owns the
//! sessions and their files, and [`http::router`] exposes them.

pub mod error;
pub mod http;
pub mod session;
pub mod store;

pub use error::ServiceError;
pub use session::{Action, Event, EventBody, RatingForm, Session, SessionMeta, Study, TaskRef, TaskState};
pub use store::{Export, ExportedEpisode, SessionSummary, Store};

/// Version stamped on every payload and log file.
pub const SCHEMA_VERSION: u32 = 1;
