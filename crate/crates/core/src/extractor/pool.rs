//! Style feature pool gathered over the four right-angle rotations.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::{Extractor, Hypercolumns, LayerLayout};
use crate::imaging::{resize_tensor, rotate_tensor, rotated_dims, ImageRgb};
use crate::matcher::PreparedPool;
use crate::tensor::Tensor3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolOptions {
    /// Rows above this count are stride-subsampled per rotation.
    pub max_rows: usize,
    /// Picks the subsampling phase.
    pub seed: u64,
}

impl Default for PoolOptions {
    fn default() -> Self {
        Self {
            max_rows: 128 * 1024,
            seed: 0,
        }
    }
}

/// Where a pool row came from: rotation `k` (counterclockwise quarter turns)
/// and the cell in that rotation's feature grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PoolCell {
    pub rotation: u8,
    pub y: u32,
    pub x: u32,
}

#[derive(Debug)]
pub struct StylePool {
    layout: Arc<LayerLayout>,
    rows: usize,
    features: Vec<f32>,
    mean: Vec<f64>,
    guide_channels: usize,
    guides: Vec<f32>,
    provenance: Vec<PoolCell>,
    grids: Vec<(usize, usize)>,
    /// Row index of each grid cell per rotation, `None` where subsampled out.
    cell_rows: Vec<Vec<Option<u32>>>,
    pub(crate) prepared: [OnceLock<PreparedPool>; 2],
}

impl StylePool {
    /// Pool over the rotations `0..rotations` of `style`. `guide` holds any
    /// number of planes at the style's resolution.
    pub fn build(
        extractor: &Extractor,
        style: &ImageRgb,
        guide: Option<&Tensor3>,
        rotations: usize,
        options: PoolOptions,
    ) -> Result<Self> {
        if !(1..=4).contains(&rotations) {
            return Err(Error::invalid(format!("rotation count {rotations} outside 1..=4")));
        }
        if let Some(g) = guide {
            if (g.height(), g.width()) != (style.height(), style.width()) {
                return Err(Error::shape(format!(
                    "style guide is {}x{}, style is {}x{}",
                    g.height(),
                    g.width(),
                    style.height(),
                    style.width()
                )));
            }
        }
        let mut parts = Vec::with_capacity(rotations);
        for k in 0..rotations {
            let rotated = rotate_tensor(style.tensor(), k);
            let hyper = extractor.hypercolumns_tensor(&rotated)?;
            let g = guide.map(|g| guide_rows(&rotate_tensor(g, k), hyper.grid_h(), hyper.grid_w()));
            parts.push((hyper, g));
        }
        let (h, w) = (style.height(), style.width());
        debug_assert!(parts
            .iter()
            .enumerate()
            .all(|(k, (p, _))| (p.grid_h() * 4, p.grid_w() * 4) == rotated_dims(k, h, w)));
        Self::from_parts(extractor.layout().clone(), parts, guide.map_or(0, |g| g.channels()), options)
    }

    /// Assembles a pool from per-rotation hypercolumns and guide rows.
    pub fn from_parts(
        layout: Arc<LayerLayout>,
        parts: Vec<(Hypercolumns, Option<Vec<f32>>)>,
        guide_channels: usize,
        options: PoolOptions,
    ) -> Result<Self> {
        let c = layout.channels();
        let total: usize = parts.iter().map(|(p, _)| p.cells()).sum();
        if total == 0 {
            return Err(Error::invalid("style pool would be empty"));
        }
        let stride = if options.max_rows > 0 && total > options.max_rows {
            total.div_ceil(options.max_rows)
        } else {
            1
        };
        let phase = (options.seed % stride as u64) as usize;

        let mut features = Vec::new();
        let mut guides = Vec::new();
        let mut provenance = Vec::new();
        let mut grids = Vec::new();
        let mut cell_rows = Vec::new();
        for (k, (hyper, g)) in parts.into_iter().enumerate() {
            if hyper.layout().as_ref() != layout.as_ref() {
                return Err(Error::shape("rotation features use a different layer layout"));
            }
            match (&g, guide_channels) {
                (None, 0) => {}
                (Some(g), gc) if gc > 0 && g.len() == hyper.cells() * gc => {}
                _ => return Err(Error::shape("guide rows do not match the feature grid")),
            }
            let (gh, gw) = (hyper.grid_h(), hyper.grid_w());
            let mut map = vec![None; gh * gw];
            for cell in (phase..gh * gw).step_by(stride) {
                map[cell] = Some(provenance.len() as u32);
                features.extend_from_slice(hyper.row(cell));
                if let Some(g) = &g {
                    guides.extend_from_slice(&g[cell * guide_channels..(cell + 1) * guide_channels]);
                }
                provenance.push(PoolCell {
                    rotation: k as u8,
                    y: (cell / gw) as u32,
                    x: (cell % gw) as u32,
                });
            }
            grids.push((gh, gw));
            cell_rows.push(map);
        }
        let rows = provenance.len();
        if rows == 0 {
            return Err(Error::invalid("style pool would be empty"));
        }
        let mut mean = vec![0.0f64; c];
        for r in 0..rows {
            for (m, &v) in mean.iter_mut().zip(&features[r * c..(r + 1) * c]) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        Ok(Self {
            layout,
            rows,
            features,
            mean,
            guide_channels,
            guides,
            provenance,
            grids,
            cell_rows,
            prepared: Default::default(),
        })
    }

    pub fn layout(&self) -> &Arc<LayerLayout> {
        &self.layout
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn channels(&self) -> usize {
        self.layout.channels()
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let c = self.channels();
        &self.features[r * c..(r + 1) * c]
    }

    /// Column mean over all rows, accumulated in f64.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn guide_channels(&self) -> usize {
        self.guide_channels
    }

    /// All guide rows, `rows x guide_channels`.
    pub fn guides(&self) -> &[f32] {
        &self.guides
    }

    pub fn guide_row(&self, r: usize) -> &[f32] {
        let g = self.guide_channels;
        &self.guides[r * g..(r + 1) * g]
    }

    pub fn provenance(&self) -> &[PoolCell] {
        &self.provenance
    }

    /// Feature-grid size of each rotation.
    pub fn grids(&self) -> &[(usize, usize)] {
        &self.grids
    }

    /// Whether every grid cell of every rotation has a row.
    pub fn is_dense(&self) -> bool {
        self.rows == self.grids.iter().map(|(h, w)| h * w).sum::<usize>()
    }

    /// Row holding `cell` of rotation `k`, if it was kept.
    pub fn row_at(&self, k: usize, y: usize, x: usize) -> Option<usize> {
        let (_, gw) = self.grids[k];
        self.cell_rows[k][y * gw + x].map(|r| r as usize)
    }
}

/// Bilinearly resamples guide planes to a feature grid and packs them
/// cell-major.
pub fn guide_rows(guide: &Tensor3, grid_h: usize, grid_w: usize) -> Vec<f32> {
    let small = resize_tensor(guide, grid_h, grid_w);
    let g = small.channels();
    let mut out = vec![0.0; grid_h * grid_w * g];
    for ch in 0..g {
        for (cell, v) in small.plane(ch).iter().enumerate() {
            out[cell * g + ch] = *v;
        }
    }
    out
}
