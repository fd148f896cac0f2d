//! Command-line tool and HTTP service for the corpusforge engine.

pub mod api;
pub mod cli;

pub use api::{router, ApiError, AppState};
