use crate::imaging::ImageRgb;
use crate::tensor::Tensor3;

/// Source coordinate in an `h x w` grid of the cell at `(y, x)` after rotating
/// the grid counterclockwise by `k` quarter turns.
#[inline]
pub fn rotated_source(k: usize, h: usize, w: usize, y: usize, x: usize) -> (usize, usize) {
    match k % 4 {
        0 => (y, x),
        1 => (x, w - 1 - y),
        2 => (h - 1 - y, w - 1 - x),
        _ => (h - 1 - x, y),
    }
}

pub fn rotated_dims(k: usize, h: usize, w: usize) -> (usize, usize) {
    if k % 2 == 0 {
        (h, w)
    } else {
        (w, h)
    }
}

/// Counterclockwise rotation by `k * 90` degrees of every plane.
pub fn rotate_tensor(src: &Tensor3, k: usize) -> Tensor3 {
    let (c, h, w) = src.dims();
    let (oh, ow) = rotated_dims(k, h, w);
    let mut out = Tensor3::zeros(c, oh, ow);
    for ch in 0..c {
        let s = src.plane(ch);
        let d = out.plane_mut(ch);
        for y in 0..oh {
            for x in 0..ow {
                let (sy, sx) = rotated_source(k, h, w, y, x);
                d[y * ow + x] = s[sy * w + sx];
            }
        }
    }
    out
}

pub fn rotate90(img: &ImageRgb, k: usize) -> ImageRgb {
    ImageRgb::from_tensor(rotate_tensor(img.tensor(), k)).expect("rotation keeps 3 planes")
}
