pub mod encoders;
pub mod error;
pub mod tgraph;
pub mod seeds;
pub mod tgsl;
pub mod training;

pub use error::{Error, Result};
