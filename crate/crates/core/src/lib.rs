//! Motion-blur synthesis and single-image video restoration.

pub mod autodiff;
pub mod blur_synth;
pub mod config;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod imageio;
pub mod network;
pub mod objectives;
pub mod scalar;
pub mod tensor;
pub mod trainer;
pub mod warp;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{FeatureMap, Image, Tensor};

pub type Image32 = Image<f32>;
pub type Image64 = Image<f64>;
