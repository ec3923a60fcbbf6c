//! Laplacian pyramids whose down/up kernel is the factor-2 bilinear resize.
//!
//! Level `i` stores `g_i - up(g_{i+1})`, where `g_i` is the image halved `i`
//! times (ceil halving); the last level is the low-pass residual `g_{n-1}`.
//! Collapsing adds each level back onto the upsampled coarser image, so the
//! round trip is exact up to float rounding for any image size.

use crate::error::{Error, Result};
use crate::imaging::resize::{resize_tensor, resize_tensor_adjoint};
use crate::imaging::ImageRgb;
use crate::tensor::Tensor3;

#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianPyramid {
    levels: Vec<Tensor3>,
}

#[inline]
fn halve(n: usize) -> usize {
    n.div_ceil(2)
}

/// Largest level count whose coarsest level is still reached by halving,
/// i.e. `long_side >= 2^(levels-1)`.
pub fn max_levels(height: usize, width: usize) -> usize {
    let long = height.max(width).max(1);
    (usize::BITS - long.leading_zeros()) as usize
}

/// Dimensions of every level, finest first.
pub fn level_dims(height: usize, width: usize, levels: usize) -> Vec<(usize, usize)> {
    let mut dims = Vec::with_capacity(levels);
    let (mut h, mut w) = (height, width);
    for _ in 0..levels {
        dims.push((h, w));
        h = halve(h);
        w = halve(w);
    }
    dims
}

impl LaplacianPyramid {
    pub fn from_levels(levels: Vec<Tensor3>) -> Result<Self> {
        let first = levels
            .first()
            .ok_or_else(|| Error::invalid("a pyramid needs at least one level"))?;
        let expect = level_dims(first.height(), first.width(), levels.len());
        for (i, (lvl, (h, w))) in levels.iter().zip(expect).enumerate() {
            if lvl.height() != h || lvl.width() != w || lvl.channels() != first.channels() {
                return Err(Error::shape(format!(
                    "pyramid level {i} is {}x{}x{}, expected {}x{h}x{w}",
                    lvl.channels(),
                    lvl.height(),
                    lvl.width(),
                    first.channels()
                )));
            }
        }
        Ok(Self { levels })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            levels: self
                .levels
                .iter()
                .map(|l| Tensor3::zeros(l.channels(), l.height(), l.width()))
                .collect(),
        }
    }

    pub fn levels(&self) -> &[Tensor3] {
        &self.levels
    }

    pub fn levels_mut(&mut self) -> &mut [Tensor3] {
        &mut self.levels
    }

    pub fn into_levels(self) -> Vec<Tensor3> {
        self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn coefficient_count(&self) -> usize {
        self.levels.iter().map(|l| l.data().len()).sum()
    }

    pub fn scale(&mut self, a: f32) {
        self.levels.iter_mut().for_each(|l| l.scale(a));
    }

    pub fn add_assign(&mut self, other: &LaplacianPyramid) {
        for (a, b) in self.levels.iter_mut().zip(&other.levels) {
            a.add_assign(b);
        }
    }
}

pub fn build_tensor_pyramid(img: &Tensor3, levels: usize) -> Result<LaplacianPyramid> {
    if levels == 0 {
        return Err(Error::invalid("pyramid level count must be at least 1"));
    }
    if levels > max_levels(img.height(), img.width()) {
        return Err(Error::invalid(format!(
            "{levels} levels need a long side of at least {} pixels, image is {}x{}",
            1usize << (levels - 1),
            img.height(),
            img.width()
        )));
    }
    let dims = level_dims(img.height(), img.width(), levels);
    let mut gaussians = Vec::with_capacity(levels);
    gaussians.push(img.clone());
    for &(h, w) in &dims[1..] {
        let next = resize_tensor(gaussians.last().unwrap(), h, w);
        gaussians.push(next);
    }
    let mut out = Vec::with_capacity(levels);
    for i in 0..levels - 1 {
        let (h, w) = dims[i];
        let mut detail = gaussians[i].clone();
        detail.axpy(-1.0, &resize_tensor(&gaussians[i + 1], h, w));
        out.push(detail);
    }
    out.push(gaussians.pop().unwrap());
    Ok(LaplacianPyramid { levels: out })
}

pub fn collapse_tensor_pyramid(pyr: &LaplacianPyramid) -> Tensor3 {
    let mut iter = pyr.levels.iter().rev();
    let mut acc = iter.next().expect("pyramids are non-empty").clone();
    for lvl in iter {
        let mut up = resize_tensor(&acc, lvl.height(), lvl.width());
        up.add_assign(lvl);
        acc = up;
    }
    acc
}

/// Gradient of a loss w.r.t. every pyramid coefficient given its gradient
/// w.r.t. the collapsed image.
pub fn collapse_adjoint(grad: &Tensor3, shape: &LaplacianPyramid) -> LaplacianPyramid {
    let mut levels = Vec::with_capacity(shape.len());
    let mut g = grad.clone();
    for (i, lvl) in shape.levels.iter().enumerate() {
        levels.push(g.clone());
        if i + 1 < shape.len() {
            let next = &shape.levels[i + 1];
            debug_assert_eq!((g.height(), g.width()), (lvl.height(), lvl.width()));
            g = resize_tensor_adjoint(&g, next.height(), next.width());
        }
    }
    LaplacianPyramid { levels }
}

pub fn build_pyramid(img: &ImageRgb, levels: usize) -> Result<LaplacianPyramid> {
    build_tensor_pyramid(img.tensor(), levels)
}

pub fn collapse_pyramid(pyr: &LaplacianPyramid) -> Result<ImageRgb> {
    LaplacianPyramid::from_levels(pyr.levels.clone())?;
    ImageRgb::from_tensor(collapse_tensor_pyramid(pyr))
}
