pub mod canonical;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod featagent;
pub mod featpool;
pub mod geo;
pub mod http;
pub mod llm;
pub mod predictor;
pub mod profiler;
pub mod rundir;
pub mod toy;
pub mod transfer;

pub use error::{Error, Result};
