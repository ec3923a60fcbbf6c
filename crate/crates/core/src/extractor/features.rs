use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Names and channel ranges of the layers packed into each hypercolumn.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    names: Vec<String>,
    ranges: Vec<Range<usize>>,
}

impl LayerLayout {
    pub fn new(layers: impl IntoIterator<Item = (String, usize)>) -> Self {
        let mut names = Vec::new();
        let mut ranges = Vec::new();
        let mut start = 0;
        for (name, width) in layers {
            names.push(name);
            ranges.push(start..start + width);
            start += width;
        }
        Self { names, ranges }
    }

    pub fn channels(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn range_of(&self, name: &str) -> Option<Range<usize>> {
        self.names.iter().position(|n| n == name).map(|i| self.ranges[i].clone())
    }
}

/// Grid of feature vectors stored row-major: cell `y * grid_w + x` occupies
/// `data[cell * channels..][..channels]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypercolumns {
    grid_h: usize,
    grid_w: usize,
    layout: Arc<LayerLayout>,
    data: Vec<f32>,
}

impl Hypercolumns {
    pub fn new(grid_h: usize, grid_w: usize, layout: Arc<LayerLayout>, data: Vec<f32>) -> Result<Self> {
        if data.len() != grid_h * grid_w * layout.channels() {
            return Err(Error::shape(format!(
                "{} values for a {grid_h}x{grid_w}x{} grid",
                data.len(),
                layout.channels()
            )));
        }
        Ok(Self {
            grid_h,
            grid_w,
            layout,
            data,
        })
    }

    pub fn zeros(grid_h: usize, grid_w: usize, layout: Arc<LayerLayout>) -> Self {
        let n = grid_h * grid_w * layout.channels();
        Self {
            grid_h,
            grid_w,
            layout,
            data: vec![0.0; n],
        }
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn cells(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn channels(&self) -> usize {
        self.layout.channels()
    }

    pub fn layout(&self) -> &Arc<LayerLayout> {
        &self.layout
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, cell: usize) -> &[f32] {
        let c = self.channels();
        &self.data[cell * c..(cell + 1) * c]
    }

    pub fn row_mut(&mut self, cell: usize) -> &mut [f32] {
        let c = self.channels();
        &mut self.data[cell * c..(cell + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Writes a `(width, grid_h, grid_w)` tensor into the channels starting at
    /// `offset`.
    pub(crate) fn scatter_planes(&mut self, src: &Tensor3, offset: usize) {
        let c = self.channels();
        let cells = self.cells();
        for ch in 0..src.channels() {
            let plane = src.plane(ch);
            for cell in 0..cells {
                self.data[cell * c + offset + ch] = plane[cell];
            }
        }
    }

    /// Inverse of [`Hypercolumns::scatter_planes`].
    pub(crate) fn gather_planes(&self, range: Range<usize>) -> Tensor3 {
        let c = self.channels();
        let mut out = Tensor3::zeros(range.len(), self.grid_h, self.grid_w);
        for (k, ch) in range.enumerate() {
            let plane = out.plane_mut(k);
            for (cell, v) in plane.iter_mut().enumerate() {
                *v = self.data[cell * c + ch];
            }
        }
        out
    }
}
