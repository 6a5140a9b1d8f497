pub mod checkpoint;
pub mod cli;
pub mod conditioning;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod pipeline;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Mat;
