pub mod densities;
pub mod error;
pub mod fractional;
pub mod kernels;
pub mod model;
pub mod montecarlo;
pub mod quad;
pub mod verify;

pub use error::{Error, Result};
