//! Counterfactual view augmentation and constraint learning for bundle
//! recommendation over a user / item / bundle graph.

pub mod augment;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod objective;
pub mod pipeline;
pub mod seed;
pub mod synthetic;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
