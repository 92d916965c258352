pub mod cohort;
pub mod dataset;
pub mod eval;
pub mod error;
pub mod explain;
pub mod fhir;
pub mod math;
pub mod models;
pub mod pipeline;
pub mod synth;
pub mod timeline;

pub use error::{Error, Result};
