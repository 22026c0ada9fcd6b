//! Routing engine for multi-model LLM deployments.
//!
//! Everything here is `no_std` + `alloc`: domain types and the utility
//! algebra, kNN and gradient-trained routers, the Pareto-AUC evaluation
//! protocol, and the locality / sample-complexity analysis tools. File
//! formats, the HTTP service and the CLI live in the `llmroute` crate.
#![no_std]

extern crate alloc;

pub mod error;

pub mod analysis;
pub mod data;
pub mod eval;
pub mod linalg;
pub mod routers;
pub mod types;
pub mod utility;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use types::*;
pub use utility::{argmax_utility, resolve_preset, utility};
