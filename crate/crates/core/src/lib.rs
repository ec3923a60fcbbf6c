//! Neural neighbor style transfer on the CPU.

mod error;
pub mod color_post;
pub mod decoder;
pub mod extractor;
pub mod imaging;
pub mod matcher;
pub mod nn;
pub mod synthesis;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::Tensor3;
