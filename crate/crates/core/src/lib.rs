pub mod config;
pub mod error;
pub mod experiment;
pub mod graph_data;
pub mod layers;
pub mod manifold;
pub mod model;
pub mod sparse;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
