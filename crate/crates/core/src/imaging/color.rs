//! sRGB (D65) <-> CIELAB conversion.

use std::sync::LazyLock;

use crate::imaging::{ImageLab, ImageRgb};
use crate::tensor::Tensor3;

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

// The white point is the image of sRGB white, so (1,1,1) lands exactly on a = b = 0.
static WHITE: LazyLock<[f64; 3]> = LazyLock::new(|| {
    let mut w = [0.0; 3];
    for (r, row) in RGB_TO_XYZ.iter().enumerate() {
        w[r] = row.iter().sum();
    }
    w
});

static XYZ_TO_RGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&RGB_TO_XYZ));

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
            let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
            *v = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
        }
    }
    inv
}

const DELTA: f64 = 6.0 / 29.0;

#[inline]
fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

#[inline]
fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

/// Converts one pixel; inputs are clamped to `[0, 1]` first.
pub fn rgb_pixel_to_lab(rgb: [f32; 3]) -> [f32; 3] {
    let lin = rgb.map(|c| srgb_to_linear((c as f64).clamp(0.0, 1.0)));
    let white = &*WHITE;
    let mut f = [0.0; 3];
    for r in 0..3 {
        let xyz = RGB_TO_XYZ[r][0] * lin[0] + RGB_TO_XYZ[r][1] * lin[1] + RGB_TO_XYZ[r][2] * lin[2];
        f[r] = lab_f(xyz / white[r]);
    }
    [
        (116.0 * f[1] - 16.0) as f32,
        (500.0 * (f[0] - f[1])) as f32,
        (200.0 * (f[1] - f[2])) as f32,
    ]
}

/// Inverse of [`rgb_pixel_to_lab`]; out-of-gamut results are clamped.
pub fn lab_pixel_to_rgb(lab: [f32; 3]) -> [f32; 3] {
    let fy = (lab[0] as f64 + 16.0) / 116.0;
    let fx = fy + lab[1] as f64 / 500.0;
    let fz = fy - lab[2] as f64 / 200.0;
    let white = &*WHITE;
    let xyz = [
        lab_f_inv(fx) * white[0],
        lab_f_inv(fy) * white[1],
        lab_f_inv(fz) * white[2],
    ];
    let m = &*XYZ_TO_RGB;
    let mut out = [0.0f32; 3];
    for r in 0..3 {
        let lin = m[r][0] * xyz[0] + m[r][1] * xyz[1] + m[r][2] * xyz[2];
        out[r] = linear_to_srgb(lin.max(0.0)).clamp(0.0, 1.0) as f32;
    }
    out
}

pub fn rgb_to_lab(img: &ImageRgb) -> ImageLab {
    let (h, w) = (img.height(), img.width());
    let t = img.tensor();
    let n = h * w;
    let (mut l, mut a, mut b) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let lab = rgb_pixel_to_lab([t.plane(0)[i], t.plane(1)[i], t.plane(2)[i]]);
        l[i] = lab[0];
        a[i] = lab[1];
        b[i] = lab[2];
    }
    ImageLab {
        height: h,
        width: w,
        l,
        a,
        b,
    }
}

pub fn lab_to_rgb(img: &ImageLab) -> ImageRgb {
    let n = img.len();
    let mut t = Tensor3::zeros(3, img.height, img.width);
    for i in 0..n {
        let rgb = lab_pixel_to_rgb([img.l[i], img.a[i], img.b[i]]);
        for (c, v) in rgb.iter().enumerate() {
            t.plane_mut(c)[i] = *v;
        }
    }
    ImageRgb::from_tensor(t).expect("three planes")
}
