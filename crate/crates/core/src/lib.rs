pub mod entropy;
pub mod error;
pub mod experiments;
pub mod ingest;
pub mod model;
pub mod stats;
pub mod structure;
pub mod synthgen;

pub use error::{Error, Result};
