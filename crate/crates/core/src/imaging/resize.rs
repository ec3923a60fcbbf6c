//! Bilinear resampling with half-pixel centers (`align_corners = false`) and
//! edge clamping, plus its exact adjoint.

use crate::imaging::ImageRgb;
use crate::tensor::Tensor3;

/// Per-output-sample source taps along one axis.
#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    w1: f32,
}

fn axis_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let w1 = if i1 == i0 { 0.0 } else { (src - i0 as f64) as f32 };
            Tap { i0, i1, w1 }
        })
        .collect()
}

#[inline]
fn lerp(v0: f32, v1: f32, w1: f32) -> f32 {
    // Equal endpoints return unchanged so constant signals stay exact.
    if v0 == v1 {
        v0
    } else {
        (1.0 - w1) * v0 + w1 * v1
    }
}

/// Resizes every plane of `src` to `out_h x out_w`.
pub fn resize_tensor(src: &Tensor3, out_h: usize, out_w: usize) -> Tensor3 {
    let (c, in_h, in_w) = src.dims();
    assert!(out_h >= 1 && out_w >= 1, "resize target must be at least 1x1");
    if in_h == out_h && in_w == out_w {
        return src.clone();
    }
    let xs = axis_taps(in_w, out_w);
    let ys = axis_taps(in_h, out_h);

    let mut tmp = Tensor3::zeros(c, in_h, out_w);
    for ch in 0..c {
        let plane = src.plane(ch);
        let dst = tmp.plane_mut(ch);
        for y in 0..in_h {
            let row = &plane[y * in_w..(y + 1) * in_w];
            let out = &mut dst[y * out_w..(y + 1) * out_w];
            for (o, t) in out.iter_mut().zip(&xs) {
                *o = lerp(row[t.i0], row[t.i1], t.w1);
            }
        }
    }

    let mut out = Tensor3::zeros(c, out_h, out_w);
    for ch in 0..c {
        let plane = tmp.plane(ch);
        let dst = out.plane_mut(ch);
        for (y, t) in ys.iter().enumerate() {
            let r0 = &plane[t.i0 * out_w..(t.i0 + 1) * out_w];
            let r1 = &plane[t.i1 * out_w..(t.i1 + 1) * out_w];
            let o = &mut dst[y * out_w..(y + 1) * out_w];
            for x in 0..out_w {
                o[x] = lerp(r0[x], r1[x], t.w1);
            }
        }
    }
    out
}

/// Transpose of [`resize_tensor`]: maps a gradient on the resized grid back
/// onto the `in_h x in_w` source grid.
pub fn resize_tensor_adjoint(grad: &Tensor3, in_h: usize, in_w: usize) -> Tensor3 {
    let (c, out_h, out_w) = grad.dims();
    if in_h == out_h && in_w == out_w {
        return grad.clone();
    }
    let xs = axis_taps(in_w, out_w);
    let ys = axis_taps(in_h, out_h);

    let mut tmp = Tensor3::zeros(c, in_h, out_w);
    for ch in 0..c {
        let g = grad.plane(ch);
        let dst = tmp.plane_mut(ch);
        for (y, t) in ys.iter().enumerate() {
            for x in 0..out_w {
                let v = g[y * out_w + x];
                dst[t.i0 * out_w + x] += (1.0 - t.w1) * v;
                dst[t.i1 * out_w + x] += t.w1 * v;
            }
        }
    }

    let mut out = Tensor3::zeros(c, in_h, in_w);
    for ch in 0..c {
        let g = tmp.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..in_h {
            for (x, t) in xs.iter().enumerate() {
                let v = g[y * out_w + x];
                dst[y * in_w + t.i0] += (1.0 - t.w1) * v;
                dst[y * in_w + t.i1] += t.w1 * v;
            }
        }
    }
    out
}

pub fn resize_bilinear(img: &ImageRgb, new_h: usize, new_w: usize) -> ImageRgb {
    ImageRgb::from_tensor(resize_tensor(img.tensor(), new_h, new_w)).expect("resize keeps 3 planes")
}
