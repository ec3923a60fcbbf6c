//! Lab post-process: keep the stylized luminance, bring back the content's
//! chroma aligned to it, then match the style's color mean and covariance.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::imaging::{lab_to_rgb, resize_bilinear, rgb_to_lab, ImageLab, ImageRgb};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    /// Apply unless the style is monochrome.
    #[default]
    Auto,
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorPostConfig {
    pub mode: ColorMode,
    /// Bypass threshold on the larger of the a/255 and b/255 variances.
    pub mono_threshold: f64,
    /// Spatial sigma in pixels; `None` uses `max(2, 0.01 * long side)`.
    pub sigma_spatial: Option<f32>,
    /// Range sigma in L units.
    pub sigma_range: f32,
}

impl Default for ColorPostConfig {
    fn default() -> Self {
        Self {
            mode: ColorMode::Auto,
            mono_threshold: 4e-5,
            sigma_spatial: None,
            sigma_range: 10.0,
        }
    }
}

impl ColorPostConfig {
    pub fn spatial_sigma(&self, height: usize, width: usize) -> f32 {
        self.sigma_spatial
            .unwrap_or_else(|| (0.01 * height.max(width) as f32).max(2.0))
    }
}

/// Per-channel scales mapping Lab to the coordinates used for statistics.
const NORM: [f64; 3] = [100.0, 255.0, 255.0];

/// Mean and covariance of `(L/100, a/255, b/255)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorStats {
    pub mean: [f64; 3],
    pub cov: [[f64; 3]; 3],
}

fn channels(img: &ImageLab) -> [&[f32]; 3] {
    [&img.l, &img.a, &img.b]
}

pub fn color_stats(img: &ImageLab) -> ColorStats {
    let n = img.len().max(1) as f64;
    let ch = channels(img);
    let mut mean = [0.0; 3];
    for c in 0..3 {
        mean[c] = ch[c].iter().map(|&v| v as f64 / NORM[c]).sum::<f64>() / n;
    }
    let mut cov = [[0.0; 3]; 3];
    for i in 0..img.len() {
        let d: [f64; 3] = std::array::from_fn(|c| ch[c][i] as f64 / NORM[c] - mean[c]);
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] += d[r] * d[c];
            }
        }
    }
    cov.iter_mut().flatten().for_each(|v| *v /= n);
    ColorStats { mean, cov }
}

/// Larger of the population variances of `a/255` and `b/255`.
pub fn chroma_variance(img: &ImageRgb) -> f64 {
    let s = color_stats(&rgb_to_lab(img));
    s.cov[1][1].max(s.cov[2][2])
}

pub fn detect_monochrome(style: &ImageRgb, cfg: &ColorPostConfig) -> bool {
    chroma_variance(style) < cfg.mono_threshold
}

/// Joint bilateral filter of two chroma planes guided by `guide`. Windows
/// are truncated at the border and renormalized.
pub fn guided_bilateral_ab(
    a: &[f32],
    b: &[f32],
    guide: &[f32],
    height: usize,
    width: usize,
    sigma_spatial: f32,
    sigma_range: f32,
) -> (Vec<f32>, Vec<f32>) {
    assert!(a.len() == height * width && b.len() == a.len() && guide.len() == a.len());
    assert!(sigma_spatial > 0.0 && sigma_range > 0.0);
    let radius = (2.0 * sigma_spatial).ceil() as isize;
    let side = (2 * radius + 1) as usize;
    let inv_s = 1.0 / (2.0 * sigma_spatial as f64 * sigma_spatial as f64);
    let inv_r = 1.0 / (2.0 * sigma_range as f64 * sigma_range as f64);
    let spatial: Vec<f64> = (0..side * side)
        .map(|k| {
            let dy = (k / side) as f64 - radius as f64;
            let dx = (k % side) as f64 - radius as f64;
            (-(dy * dy + dx * dx) * inv_s).exp()
        })
        .collect();

    let mut out_a = vec![0.0f32; a.len()];
    let mut out_b = vec![0.0f32; a.len()];
    out_a
        .par_chunks_mut(width)
        .zip(out_b.par_chunks_mut(width))
        .enumerate()
        .for_each(|(y, (row_a, row_b))| {
            let y0 = (y as isize - radius).max(0) as usize;
            let y1 = ((y as isize + radius) as usize).min(height - 1);
            for x in 0..width {
                let x0 = (x as isize - radius).max(0) as usize;
                let x1 = ((x as isize + radius) as usize).min(width - 1);
                let g = guide[y * width + x] as f64;
                let (mut sw, mut sa, mut sb) = (0.0f64, 0.0f64, 0.0f64);
                for qy in y0..=y1 {
                    let srow = ((qy as isize - y as isize + radius) as usize) * side;
                    for qx in x0..=x1 {
                        let q = qy * width + qx;
                        let d = guide[q] as f64 - g;
                        let wgt = spatial[srow + (qx as isize - x as isize + radius) as usize] * (-d * d * inv_r).exp();
                        sw += wgt;
                        sa += wgt * a[q] as f64;
                        sb += wgt * b[q] as f64;
                    }
                }
                row_a[x] = (sa / sw) as f32;
                row_b[x] = (sb / sw) as f32;
            }
        });
    (out_a, out_b)
}

fn sym_pow(m: &[[f64; 3]; 3], half_sign: f64) -> Matrix3<f64> {
    let mat = Matrix3::from_fn(|r, c| 0.5 * (m[r][c] + m[c][r]));
    let eig = SymmetricEigen::new(mat);
    let d = eig.eigenvalues.map(|l| l.max(1e-8).powf(0.5 * half_sign));
    eig.eigenvectors * Matrix3::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Affine recoloring `y = A (x - mu_img) + mu_target` with
/// `A = cov_target^(1/2) cov_img^(-1/2)`, in normalized coordinates.
pub fn match_color_moments(img: &ImageLab, target: &ColorStats) -> ImageLab {
    let src = color_stats(img);
    let a = sym_pow(&target.cov, 1.0) * sym_pow(&src.cov, -1.0);
    let mu_s = Vector3::from(src.mean);
    let mu_t = Vector3::from(target.mean);
    let ch = channels(img);
    let n = img.len();
    let mut out = [vec![0.0f32; n], vec![0.0f32; n], vec![0.0f32; n]];
    for i in 0..n {
        let x = Vector3::from_fn(|c, _| ch[c][i] as f64 / NORM[c]);
        let y = a * (x - mu_s) + mu_t;
        for c in 0..3 {
            out[c][i] = (y[c] * NORM[c]) as f32;
        }
    }
    let [l, a, b] = out;
    ImageLab {
        height: img.height,
        width: img.width,
        l,
        a,
        b,
    }
}

/// Luminance of `stylized` with the content's chroma, bilateral-filtered
/// along that luminance. This is the stage before moment matching.
pub fn transfer_chroma(stylized: &ImageRgb, content: &ImageRgb, cfg: &ColorPostConfig) -> ImageLab {
    let (h, w) = (stylized.height(), stylized.width());
    let out = rgb_to_lab(stylized);
    let content_lab = rgb_to_lab(&resize_bilinear(content, h, w));
    let (a, b) = guided_bilateral_ab(
        &content_lab.a,
        &content_lab.b,
        &out.l,
        h,
        w,
        cfg.spatial_sigma(h, w),
        cfg.sigma_range,
    );
    ImageLab {
        height: h,
        width: w,
        l: out.l,
        a,
        b,
    }
}

pub fn apply_color_post(
    stylized: &ImageRgb,
    content: &ImageRgb,
    style: &ImageRgb,
    cfg: &ColorPostConfig,
) -> ImageRgb {
    match cfg.mode {
        ColorMode::Off => return stylized.clone(),
        ColorMode::Auto if detect_monochrome(style, cfg) => return stylized.clone(),
        _ => {}
    }
    let mixed = transfer_chroma(stylized, content, cfg);
    let target = color_stats(&rgb_to_lab(style));
    lab_to_rgb(&match_color_moments(&mixed, &target))
}
