//! Parameter-efficient image-to-video transfer: a frame-wise ViT backbone whose
//! frozen weights are adapted to video by bottleneck adapters carrying
//! depthwise 3D convolutions with dynamically predicted dilation rates.

pub mod adapter;
pub mod error;
pub mod experiment;
pub mod params;
pub mod tensor;
pub mod train;
pub mod vit;

pub use error::{Error, Result};
