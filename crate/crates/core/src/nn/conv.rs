//! Stride-1 "same" convolution via row-tiled im2col and sgemm.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::gemm::{gemm, MatRef};
use crate::tensor::Tensor3;

/// Upper bound on im2col buffer size per tile, in floats.
const TILE_FLOATS: usize = 1 << 20;

/// Square-kernel convolution with zero padding `k / 2`, weights laid out as
/// `[out, in, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        weight: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::invalid(format!("kernel size {kernel} must be odd")));
        }
        if weight.len() != out_channels * in_channels * kernel * kernel || bias.len() != out_channels {
            return Err(Error::shape(format!(
                "conv {in_channels}->{out_channels} k{kernel}: got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel,
            weight,
            bias,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn tile_rows(&self, width: usize, height: usize) -> usize {
        (TILE_FLOATS / (self.patch_len() * width).max(1)).clamp(1, height.max(1))
    }

    pub fn forward(&self, x: &Tensor3) -> Tensor3 {
        assert_eq!(x.channels(), self.in_channels, "conv input channel mismatch");
        let (h, w) = (x.height(), x.width());
        let mut out = Tensor3::zeros(self.out_channels, h, w);
        let rows = self.tile_rows(w, h);
        let tiles: Vec<(usize, usize)> = (0..h).step_by(rows).map(|y0| (y0, (y0 + rows).min(h))).collect();
        let a = MatRef::row_major(&self.weight, self.out_channels, self.patch_len());

        let results: Vec<Vec<f32>> = tiles
            .par_iter()
            .map(|&(y0, y1)| {
                let p = (y1 - y0) * w;
                let col = im2col(x, self.kernel, y0, y1);
                let mut buf = vec![0.0; self.out_channels * p];
                gemm(a, MatRef::row_major(&col, self.patch_len(), p), 0.0, &mut buf, p);
                buf
            })
            .collect();

        let plane = h * w;
        for (&(y0, y1), buf) in tiles.iter().zip(&results) {
            let p = (y1 - y0) * w;
            for co in 0..self.out_channels {
                let b = self.bias[co];
                let dst = &mut out.data_mut()[co * plane + y0 * w..co * plane + y1 * w];
                for (d, s) in dst.iter_mut().zip(&buf[co * p..(co + 1) * p]) {
                    *d = s + b;
                }
            }
        }
        out
    }

    /// Convolution whose forward pass is the input-gradient of `self`:
    /// channels swapped and kernels rotated by 180 degrees, no bias.
    pub fn transposed(&self) -> Conv2d {
        let k = self.kernel;
        let mut weight = vec![0.0; self.weight.len()];
        for co in 0..self.out_channels {
            for ci in 0..self.in_channels {
                for ky in 0..k {
                    for kx in 0..k {
                        let src = ((co * self.in_channels + ci) * k + ky) * k + kx;
                        let dst = ((ci * self.out_channels + co) * k + (k - 1 - ky)) * k + (k - 1 - kx);
                        weight[dst] = self.weight[src];
                    }
                }
            }
        }
        Conv2d {
            out_channels: self.in_channels,
            in_channels: self.out_channels,
            kernel: k,
            weight,
            bias: vec![0.0; self.in_channels],
        }
    }

    /// Gradient w.r.t. the input given the gradient w.r.t. the output.
    pub fn backward_input(&self, grad_out: &Tensor3) -> Tensor3 {
        self.transposed().forward(grad_out)
    }

    /// Accumulates weight and bias gradients into `dw` and `db`.
    pub fn backward_params(&self, x: &Tensor3, grad_out: &Tensor3, dw: &mut [f32], db: &mut [f32]) {
        let (h, w) = (x.height(), x.width());
        assert_eq!(grad_out.dims(), (self.out_channels, h, w));
        let plane = h * w;
        let rows = self.tile_rows(w, h);
        for y0 in (0..h).step_by(rows) {
            let y1 = (y0 + rows).min(h);
            let p = (y1 - y0) * w;
            let col = im2col(x, self.kernel, y0, y1);
            let g = MatRef {
                data: &grad_out.data()[y0 * w..],
                rows: self.out_channels,
                cols: p,
                rs: plane,
                cs: 1,
            };
            gemm(g, MatRef::row_major(&col, self.patch_len(), p).t(), 1.0, dw, self.patch_len());
        }
        for (co, d) in db.iter_mut().enumerate() {
            *d += grad_out.plane(co).iter().sum::<f32>();
        }
    }
}

/// Patch matrix for output rows `[y0, y1)`: `(in * k * k) x ((y1 - y0) * w)`.
fn im2col(x: &Tensor3, k: usize, y0: usize, y1: usize) -> Vec<f32> {
    let (c, h, w) = x.dims();
    let r = (k / 2) as isize;
    let p = (y1 - y0) * w;
    let mut col = vec![0.0; c * k * k * p];
    for ci in 0..c {
        let plane = x.plane(ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * p..][..p];
                let dx = kx as isize - r;
                for y in y0..y1 {
                    let sy = y as isize + ky as isize - r;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut row[(y - y0) * w..(y - y0 + 1) * w];
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                    if x_lo < x_hi {
                        let s0 = (x_lo as isize + dx) as usize;
                        dst[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                    }
                }
            }
        }
    }
    col
}
