pub mod attacks;
pub mod campaign;
pub mod cli;
pub mod data;
pub mod error;
pub mod fixture;
pub mod io;
pub mod nn;
pub mod saliency;
pub mod trainer;

pub use error::{Error, Result};
