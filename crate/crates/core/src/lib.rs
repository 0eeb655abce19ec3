//! Plug-and-play ADMM with single-instance Kolmogorov-Arnold network priors.

pub mod admm;
pub mod error;
pub mod fft;
pub mod experiment;
pub mod image;
pub mod imageio;
pub mod kan;
pub mod metrics;
pub mod operators;
pub mod prox;
pub mod trainer;
pub mod tv;

pub use error::{Error, Result};
pub use image::{ImageGrid, Shape};
