use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Planar RGB image with nominal range `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRgb {
    planes: Tensor3,
}

impl ImageRgb {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("images must be at least 1x1"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        Ok(Self {
            planes: Tensor3::from_vec(3, height, width, data)?,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut planes = Tensor3::zeros(3, height, width);
        for (c, v) in rgb.iter().enumerate() {
            planes.plane_mut(c).fill(*v);
        }
        Self { planes }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> Self {
        let mut planes = Tensor3::zeros(3, height, width);
        for y in 0..height {
            for x in 0..width {
                let px = f(y, x);
                for (c, v) in px.iter().enumerate() {
                    planes.set(c, y, x, *v);
                }
            }
        }
        Self { planes }
    }

    pub fn from_tensor(planes: Tensor3) -> Result<Self> {
        if planes.channels() != 3 {
            return Err(Error::shape(format!(
                "an RGB image needs 3 planes, got {}",
                planes.channels()
            )));
        }
        if planes.height() == 0 || planes.width() == 0 {
            return Err(Error::shape("images must be at least 1x1"));
        }
        Ok(Self { planes })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.planes.height()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.planes.width()
    }

    pub fn long_side(&self) -> usize {
        self.height().max(self.width())
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.planes
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.planes
    }

    pub fn data(&self) -> &[f32] {
        self.planes.data()
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [
            self.planes.at(0, y, x),
            self.planes.at(1, y, x),
            self.planes.at(2, y, x),
        ]
    }

    pub fn clamped(&self) -> ImageRgb {
        Self {
            planes: self.planes.map(|v| v.clamp(0.0, 1.0)),
        }
    }

    pub fn mean_abs_diff(&self, other: &ImageRgb) -> f32 {
        let a = self.data();
        let b = other.data();
        let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum();
        (sum / a.len() as f64) as f32
    }

    /// Decodes an 8-bit PNG or JPEG, mapping each byte `v` to `v / 255`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let decoded = image::ImageReader::open(path.as_ref())?
            .with_guessed_format()?
            .decode()?
            .to_rgb8();
        let (w, h) = (decoded.width() as usize, decoded.height() as usize);
        let mut planes = Tensor3::zeros(3, h, w);
        for (x, y, px) in decoded.enumerate_pixels() {
            for c in 0..3 {
                planes.set(c, y as usize, x as usize, px[c] as f32 / 255.0);
            }
        }
        Self::from_tensor(planes)
    }

    /// Quantizes to 8 bits (clamp, then round) in row-major interleaved order.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let (h, w) = (self.height(), self.width());
        let mut out = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let v = self.planes.at(c, y, x).clamp(0.0, 1.0);
                    out.push((v * 255.0).round() as u8);
                }
            }
        }
        out
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf = image::RgbImage::from_raw(
            self.width() as u32,
            self.height() as u32,
            self.to_rgb8(),
        )
        .expect("buffer length matches dimensions");
        buf.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
        Ok(())
    }
}

/// CIELAB image with separate L, a and b planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageLab {
    pub height: usize,
    pub width: usize,
    pub l: Vec<f32>,
    pub a: Vec<f32>,
    pub b: Vec<f32>,
}

impl ImageLab {
    pub fn new(height: usize, width: usize, l: Vec<f32>, a: Vec<f32>, b: Vec<f32>) -> Result<Self> {
        let n = height * width;
        if l.len() != n || a.len() != n || b.len() != n {
            return Err(Error::shape("Lab planes must each hold height*width values"));
        }
        Ok(Self {
            height,
            width,
            l,
            a,
            b,
        })
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
