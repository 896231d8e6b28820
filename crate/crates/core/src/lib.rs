pub mod augment;
pub mod cli;
pub mod distill;
pub mod error;
pub mod features;
pub mod model;
pub mod numcore;
pub mod quantize;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
