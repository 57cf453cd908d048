pub mod cli;
pub mod codec;
pub mod config;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod evalharness;
pub mod generate;
pub mod model;
pub mod nn;
pub mod segment;
pub mod trainloop;

pub use error::{Error, Result};
