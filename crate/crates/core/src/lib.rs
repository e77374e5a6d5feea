//! Gradient distribution prior toolkit.

pub mod deconv;
pub mod dehaze;
pub mod error;
pub mod image;
pub mod models;
pub mod naturalize;
pub mod noisest;
pub mod prior;
pub mod quality;
pub mod restore;
pub mod spectrum;
pub mod synth;

pub use error::{GdpError, Result};
pub use image::{GradientField, Image, Kernel};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
