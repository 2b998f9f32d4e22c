//! Structured meta-learning over task-specific models, with gradient-alignment
//! task similarity and post-hoc semantic-space analysis.

pub mod analysis;
pub mod autodiff;
pub mod error;
pub mod metaengine;
pub mod models;
pub mod seed;
pub mod taskgen;

pub use error::{Error, Result};
