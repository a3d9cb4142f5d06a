pub mod baselines;
pub mod checkpoint;
pub mod error;
pub mod grid;
pub mod loss;
pub mod model;
pub mod nn;
pub mod physics;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};
