//! File formats, reports, the routing service and the pipeline behind the
//! `llmroute` CLI.

pub mod config;
pub mod dataio;
pub mod error;
pub mod persist;
pub mod pipeline;
pub mod report;
pub mod service;

pub use error::{Error, Result};
