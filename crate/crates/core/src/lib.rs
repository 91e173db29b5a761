pub mod autograd;
pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod features;
pub mod generator;
pub mod loss;
pub mod nn;
pub mod optim;
pub mod resample;
pub mod signal;
pub mod spectral;
pub mod train;

pub use error::{Error, Result};
