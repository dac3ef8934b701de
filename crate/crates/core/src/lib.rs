pub mod attrnet;
pub mod config;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod pipeline;
pub mod prob;
pub mod similarity;
pub mod verifier;

pub use error::{Error, ErrorCategory, Result};
pub use prob::ProbabilityVector;
