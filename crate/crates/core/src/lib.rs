//! Face swapping and identity mixing with a style-based generator driven by
//! an attribute encoder.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod pipeline;
pub mod roi;
pub mod routing;
pub mod style;
pub mod surrogates;
pub mod trainer;

pub use error::{MfimError, Result};
