//! IO, configuration, and pipeline plumbing around the `icm-core` engine:
//! source ingestion, run artifacts, the HTTP scoring backend, and the
//! seed -> pseudo-label -> fine-tune-export scale-up path.

pub mod backend;
pub mod config;
pub mod formats;
pub mod pipeline;
pub mod udhr;
