//! Pointwise activations, 2x2 max pooling and depth-to-space with their
//! vector-Jacobian products.

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub fn relu_in_place(x: &mut Tensor3) {
    x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Masks `grad` by `post > 0`; the subgradient at zero is zero.
pub fn relu_backward(grad: &mut Tensor3, post: &Tensor3) {
    for (g, &y) in grad.data_mut().iter_mut().zip(post.data()) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn leaky_relu_in_place(x: &mut Tensor3, slope: f32) {
    x.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v *= slope
        }
    });
}

/// Backward through a leaky ReLU given its output (same sign as its input
/// for a positive slope).
pub fn leaky_relu_backward(grad: &mut Tensor3, post: &Tensor3, slope: f32) {
    for (g, &y) in grad.data_mut().iter_mut().zip(post.data()) {
        if y < 0.0 {
            *g *= slope;
        }
    }
}

/// 2x2 stride-2 max pooling with floor sizing. Also returns, per output
/// cell, the flat in-plane index of the first maximum in scan order.
pub fn max_pool2(x: &Tensor3) -> (Tensor3, Vec<u32>) {
    let (c, h, w) = x.dims();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor3::zeros(c, oh, ow);
    let mut arg = vec![0u32; c * oh * ow];
    for ch in 0..c {
        let src = x.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = (2 * y) * w + 2 * xx;
                for cand in [(2 * y) * w + 2 * xx + 1, (2 * y + 1) * w + 2 * xx, (2 * y + 1) * w + 2 * xx + 1] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                dst[y * ow + xx] = src[best];
                arg[ch * oh * ow + y * ow + xx] = best as u32;
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward(grad: &Tensor3, arg: &[u32], in_h: usize, in_w: usize) -> Tensor3 {
    let (c, oh, ow) = grad.dims();
    let mut out = Tensor3::zeros(c, in_h, in_w);
    for ch in 0..c {
        let g = grad.plane(ch);
        let a = &arg[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = out.plane_mut(ch);
        for (gv, &i) in g.iter().zip(a) {
            dst[i as usize] += gv;
        }
    }
    out
}

/// Rearranges `(c * r^2, h, w)` into `(c, h * r, w * r)` with input channel
/// `c * r^2 + dy * r + dx` landing at offset `(dy, dx)` of each block.
pub fn depth_to_space(x: &Tensor3, r: usize) -> Result<Tensor3> {
    let (cin, h, w) = x.dims();
    if r == 0 || cin % (r * r) != 0 {
        return Err(Error::shape(format!("{cin} channels cannot be split into {r}x{r} blocks")));
    }
    let c = cin / (r * r);
    let mut out = Tensor3::zeros(c, h * r, w * r);
    let ow = w * r;
    for ch in 0..c {
        for dy in 0..r {
            for dx in 0..r {
                let src = x.plane(ch * r * r + dy * r + dx);
                let dst = out.plane_mut(ch);
                for y in 0..h {
                    for xx in 0..w {
                        dst[(y * r + dy) * ow + xx * r + dx] = src[y * w + xx];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse (and adjoint) of [`depth_to_space`].
pub fn space_to_depth(x: &Tensor3, r: usize) -> Result<Tensor3> {
    let (c, hh, ww) = x.dims();
    if r == 0 || hh % r != 0 || ww % r != 0 {
        return Err(Error::shape(format!("{hh}x{ww} is not divisible into {r}x{r} blocks")));
    }
    let (h, w) = (hh / r, ww / r);
    let mut out = Tensor3::zeros(c * r * r, h, w);
    for ch in 0..c {
        let src = x.plane(ch);
        for dy in 0..r {
            for dx in 0..r {
                let dst = out.plane_mut(ch * r * r + dy * r + dx);
                for y in 0..h {
                    for xx in 0..w {
                        dst[y * w + xx] = src[(y * r + dy) * ww + xx * r + dx];
                    }
                }
            }
        }
    }
    Ok(out)
}
