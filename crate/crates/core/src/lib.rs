//! Guided flow-matching sampling for action-chunked policies.

pub mod chunking;
pub mod env;
pub mod error;
pub mod flow;
pub mod guidance;
pub mod harness;
pub mod metrics;
pub mod verify;

pub use error::{Error, Result};
