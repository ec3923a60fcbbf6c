//! Deterministic image primitives.

mod color;
mod image;
pub mod pyramid;
mod resize;
mod rotate;

pub use color::{lab_pixel_to_rgb, lab_to_rgb, rgb_pixel_to_lab, rgb_to_lab};
pub use image::{ImageLab, ImageRgb};
pub use pyramid::{build_pyramid, collapse_pyramid, LaplacianPyramid};
pub use resize::{resize_bilinear, resize_tensor, resize_tensor_adjoint};
pub use rotate::{rotate90, rotate_tensor, rotated_dims, rotated_source};
