//! Nearest-neighbour replacement of content features by style pool rows
//! under (optionally zero-centered) cosine distance.

mod prepared;
mod search;

use serde::{Deserialize, Serialize};

pub use prepared::PreparedPool;

use crate::error::{Error, Result};
use crate::extractor::{Hypercolumns, StylePool};
use prepared::{centered_f32, centered_norm, column_mean, exact_distance, ssd, EPS};
use search::{similarity_block, GuidePair, Search};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Whole hypercolumns matched jointly.
    Hypercolumn,
    /// Each layer's slice matched independently.
    Split,
    /// Square windows of hypercolumns (odd side), overlapping votes averaged.
    Patch(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub mode: MatchMode,
    pub centered: bool,
    /// Weight of the cosine term when guides are present.
    pub w_cos: f32,
    /// Weight of the guide SSD term when guides are present.
    pub w_guide: f32,
    /// Content cells scored per distance tile.
    pub chunk_rows: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            mode: MatchMode::Hypercolumn,
            centered: true,
            w_cos: 0.5,
            w_guide: 0.5,
            chunk_rows: 1024,
        }
    }
}

impl MatchConfig {
    pub fn with_mode(mut self, mode: MatchMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |w: f32| w.is_finite() && (0.0..=1e6).contains(&w);
        if !ok(self.w_cos) || !ok(self.w_guide) || self.w_cos + self.w_guide <= 0.0 {
            return Err(Error::invalid(format!(
                "match weights must be non-negative with a positive sum, got {} and {}",
                self.w_cos, self.w_guide
            )));
        }
        if self.chunk_rows == 0 {
            return Err(Error::invalid("chunk_rows must be at least 1"));
        }
        if let MatchMode::Patch(k) = self.mode {
            if k % 2 == 0 {
                return Err(Error::invalid(format!("patch size {k} must be odd")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MatchIndices {
    /// One pool row per content cell.
    Rows(Vec<u32>),
    /// `cells x layers` pool rows, row-major.
    PerLayer { layers: usize, indices: Vec<u32> },
}

#[derive(Clone, Debug)]
pub struct MatchResult {
    pub mode: MatchMode,
    pub indices: MatchIndices,
    pub target: Hypercolumns,
}

impl MatchResult {
    /// Pool row feeding `cell` (and `layer` in split mode).
    pub fn index(&self, cell: usize, layer: usize) -> u32 {
        match &self.indices {
            MatchIndices::Rows(v) => v[cell],
            MatchIndices::PerLayer { layers, indices } => indices[cell * layers + layer],
        }
    }

    /// Number of distinct pool rows used.
    pub fn distinct_rows(&self) -> usize {
        let mut v = match &self.indices {
            MatchIndices::Rows(v) => v.clone(),
            MatchIndices::PerLayer { indices, .. } => indices.clone(),
        };
        v.sort_unstable();
        v.dedup();
        v.len()
    }
}

/// `1 - a.b / (max(|a|, eps) max(|b|, eps))` with `eps = 1e-8`.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len(), "cosine distance of vectors with different lengths");
    let zero = vec![0.0; a.len()];
    exact_distance(a, &zero, centered_norm(a, &zero), b, &zero, centered_norm(b, &zero)) as f32
}

struct ContentSide<'a> {
    hyper: &'a Hypercolumns,
    mean: Vec<f64>,
}

impl<'a> ContentSide<'a> {
    fn new(hyper: &'a Hypercolumns, centered: bool) -> Self {
        let c = hyper.channels();
        let mean = if centered { column_mean(hyper.data(), c) } else { vec![0.0; c] };
        Self { hyper, mean }
    }
}

fn check_inputs(content: &Hypercolumns, pool: &StylePool, guide: Option<&[f32]>) -> Result<()> {
    if content.layout().as_ref() != pool.layout().as_ref() {
        return Err(Error::shape(format!(
            "content has {} channels in {} layers, pool has {} in {}",
            content.channels(),
            content.layout().len(),
            pool.channels(),
            pool.layout().len()
        )));
    }
    if content.cells() == 0 {
        return Err(Error::invalid("no content cells to match"));
    }
    if let Some(g) = guide {
        if pool.guide_channels() == 0 {
            return Err(Error::invalid("guided matching needs a style pool built with guides"));
        }
        if g.len() != content.cells() * pool.guide_channels() {
            return Err(Error::shape(format!(
                "content guide has {} values, expected {} cells x {} channels",
                g.len(),
                content.cells(),
                pool.guide_channels()
            )));
        }
    }
    Ok(())
}

/// Dispatches on `cfg.mode`; `guide` is the content guide packed cell-major
/// (see [`crate::extractor::guide_rows`]).
pub fn match_features(
    content: &Hypercolumns,
    pool: &StylePool,
    guide: Option<&[f32]>,
    cfg: &MatchConfig,
) -> Result<MatchResult> {
    cfg.validate()?;
    check_inputs(content, pool, guide)?;
    match cfg.mode {
        MatchMode::Hypercolumn => Ok(run_hypercolumn(content, pool, guide, cfg)),
        MatchMode::Split => Ok(run_split(content, pool, guide, cfg)),
        MatchMode::Patch(k) => run_patch(content, pool, guide, cfg, k),
    }
}

pub fn match_hypercolumn(content: &Hypercolumns, pool: &StylePool, cfg: &MatchConfig) -> Result<MatchResult> {
    match_features(content, pool, None, &cfg.with_mode(MatchMode::Hypercolumn))
}

pub fn match_split(content: &Hypercolumns, pool: &StylePool, cfg: &MatchConfig) -> Result<MatchResult> {
    match_features(content, pool, None, &cfg.with_mode(MatchMode::Split))
}

/// Guided matching in the mode given by `cfg` (hypercolumn or split).
pub fn match_guided(
    content: &Hypercolumns,
    pool: &StylePool,
    guide: &[f32],
    cfg: &MatchConfig,
) -> Result<MatchResult> {
    match_features(content, pool, Some(guide), cfg)
}

pub fn match_patch3(content: &Hypercolumns, pool: &StylePool, cfg: &MatchConfig) -> Result<MatchResult> {
    match_features(content, pool, None, &cfg.with_mode(MatchMode::Patch(3)))
}

/// Exact `cells x rows` matrix of whole-hypercolumn cosine distances.
pub fn distance_matrix(content: &Hypercolumns, pool: &StylePool, centered: bool) -> Result<Vec<f64>> {
    check_inputs(content, pool, None)?;
    let side = ContentSide::new(content, centered);
    let prep = PreparedPool::get(pool, centered);
    let n = pool.rows();
    let mut out = vec![0.0; content.cells() * n];
    for i in 0..content.cells() {
        let a = content.row(i);
        let na = centered_norm(a, &side.mean);
        for j in 0..n {
            out[i * n + j] = exact_distance(a, &side.mean, na, pool.row(j), &prep.mean, prep.norms[j]);
        }
    }
    Ok(out)
}

fn weights(cfg: &MatchConfig, guided: bool) -> (f32, f32) {
    if guided {
        (cfg.w_cos, cfg.w_guide)
    } else {
        (1.0, 0.0)
    }
}

fn normalized_queries(side: &ContentSide<'_>, ranges: &[std::ops::Range<usize>]) -> Vec<f32> {
    let c = side.hyper.channels();
    let mut q = centered_f32(side.hyper.data(), c, &side.mean);
    for (i, row) in q.chunks_mut(c).enumerate() {
        let raw = side.hyper.row(i);
        for r in ranges {
            let inv = 1.0 / centered_norm(&raw[r.clone()], &side.mean[r.clone()]).max(EPS);
            row[r.clone()].iter_mut().for_each(|v| *v = (*v as f64 * inv) as f32);
        }
    }
    q
}

fn run_hypercolumn(content: &Hypercolumns, pool: &StylePool, guide: Option<&[f32]>, cfg: &MatchConfig) -> MatchResult {
    let c = content.channels();
    let n = pool.rows();
    let side = ContentSide::new(content, cfg.centered);
    let prep = PreparedPool::get(pool, cfg.centered);
    let q = normalized_queries(&side, &[0..c]);
    let p = prep.rows(pool);
    let content_norms: Vec<f64> = (0..content.cells()).map(|i| centered_norm(content.row(i), &side.mean)).collect();
    let (w_cos, w_guide) = weights(cfg, guide.is_some());
    let fill = |i0: usize, i1: usize, out: &mut [f32]| similarity_block(&q, c, p, c, n, 0..c, i0, i1, 0.0, out);
    let exact = |i: usize, j: usize| {
        let mut v = w_cos as f64
            * exact_distance(content.row(i), &side.mean, content_norms[i], pool.row(j), &prep.mean, prep.norms[j]);
        if let Some(g) = guide {
            let gc = pool.guide_channels();
            v += w_guide as f64 * ssd(&g[i * gc..(i + 1) * gc], pool.guide_row(j));
        }
        v
    };
    let idx = Search {
        queries: content.cells(),
        pool_rows: n,
        fill: &fill,
        pool_inv: &prep.inv,
        guides: guide.map(|g| GuidePair {
            content: g,
            pool: pool.guides(),
            channels: pool.guide_channels(),
        }),
        w_cos,
        w_guide,
        exact: &exact,
        chunk_rows: cfg.chunk_rows,
    }
    .run();

    let mut target = Hypercolumns::zeros(content.grid_h(), content.grid_w(), content.layout().clone());
    for (cell, &j) in idx.iter().enumerate() {
        target.row_mut(cell).copy_from_slice(pool.row(j as usize));
    }
    MatchResult {
        mode: MatchMode::Hypercolumn,
        indices: MatchIndices::Rows(idx),
        target,
    }
}

fn run_split(content: &Hypercolumns, pool: &StylePool, guide: Option<&[f32]>, cfg: &MatchConfig) -> MatchResult {
    let c = content.channels();
    let n = pool.rows();
    let ranges = content.layout().ranges().to_vec();
    let layers = ranges.len();
    let side = ContentSide::new(content, cfg.centered);
    let prep = PreparedPool::get(pool, cfg.centered);
    let q = normalized_queries(&side, &ranges);
    let p = prep.rows(pool);
    let (w_cos, w_guide) = weights(cfg, guide.is_some());
    let cells = content.cells();
    let mut indices = vec![0u32; cells * layers];
    for (l, r) in ranges.iter().enumerate() {
        let content_norms: Vec<f64> = (0..cells)
            .map(|i| centered_norm(&content.row(i)[r.clone()], &side.mean[r.clone()]))
            .collect();
        let fill =
            |i0: usize, i1: usize, out: &mut [f32]| similarity_block(&q, c, p, c, n, r.clone(), i0, i1, 0.0, out);
        let exact = |i: usize, j: usize| {
            let mut v = w_cos as f64
                * exact_distance(
                    &content.row(i)[r.clone()],
                    &side.mean[r.clone()],
                    content_norms[i],
                    &pool.row(j)[r.clone()],
                    &prep.mean[r.clone()],
                    prep.layer_norms[j * layers + l],
                );
            if let Some(g) = guide {
                let gc = pool.guide_channels();
                v += w_guide as f64 * ssd(&g[i * gc..(i + 1) * gc], pool.guide_row(j));
            }
            v
        };
        let idx = Search {
            queries: cells,
            pool_rows: n,
            fill: &fill,
            pool_inv: &prep.layer_inv[l * n..(l + 1) * n],
            guides: guide.map(|g| GuidePair {
                content: g,
                pool: pool.guides(),
                channels: pool.guide_channels(),
            }),
            w_cos,
            w_guide,
            exact: &exact,
            chunk_rows: cfg.chunk_rows,
        }
        .run();
        for (cell, j) in idx.into_iter().enumerate() {
            indices[cell * layers + l] = j;
        }
    }

    let mut target = Hypercolumns::zeros(content.grid_h(), content.grid_w(), content.layout().clone());
    for cell in 0..cells {
        let row = target.row_mut(cell);
        for (l, r) in ranges.iter().enumerate() {
            let j = indices[cell * layers + l] as usize;
            row[r.clone()].copy_from_slice(&pool.row(j)[r.clone()]);
        }
    }
    MatchResult {
        mode: MatchMode::Split,
        indices: MatchIndices::PerLayer { layers, indices },
        target,
    }
}

fn run_patch(
    content: &Hypercolumns,
    pool: &StylePool,
    guide: Option<&[f32]>,
    cfg: &MatchConfig,
    size: usize,
) -> Result<MatchResult> {
    let (gh, gw) = (content.grid_h(), content.grid_w());
    if gh < size || gw < size {
        return Err(Error::shape(format!("{gh}x{gw} grid is smaller than the {size}x{size} patch")));
    }
    if !pool.is_dense() {
        return Err(Error::invalid("patch matching needs a pool without subsampling"));
    }
    if pool.grids().iter().any(|&(h, w)| h < size || w < size) {
        return Err(Error::shape(format!("style grid is smaller than the {size}x{size} patch")));
    }
    let c = content.channels();
    let n = pool.rows();
    let cells = content.cells();
    let r = (size / 2) as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dy, dx))).collect();
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;

    // Neighbour tables with replicate padding, one per offset.
    let content_nb: Vec<Vec<u32>> = offsets
        .iter()
        .map(|&(dy, dx)| {
            (0..cells)
                .map(|i| {
                    let (y, x) = ((i / gw) as isize, (i % gw) as isize);
                    (clamp(y + dy, gh) * gw + clamp(x + dx, gw)) as u32
                })
                .collect()
        })
        .collect();
    let pool_nb: Vec<Vec<u32>> = offsets
        .iter()
        .map(|&(dy, dx)| {
            pool.provenance()
                .iter()
                .map(|cell| {
                    let k = cell.rotation as usize;
                    let (ph, pw) = pool.grids()[k];
                    let y = clamp(cell.y as isize + dy, ph);
                    let x = clamp(cell.x as isize + dx, pw);
                    pool.row_at(k, y, x).expect("dense pool") as u32
                })
                .collect()
        })
        .collect();

    let side = ContentSide::new(content, cfg.centered);
    let prep = PreparedPool::get(pool, cfg.centered);
    let content_norms: Vec<f64> = (0..cells)
        .map(|i| patch_norm(content_nb.iter().map(|nb| content.row(nb[i] as usize)), &side.mean))
        .collect();
    let pool_norms: Vec<f64> = (0..n)
        .map(|j| patch_norm(pool_nb.iter().map(|nb| pool.row(nb[j] as usize)), &prep.mean))
        .collect();
    let pool_inv: Vec<f32> = pool_norms.iter().map(|&v| (1.0 / v.max(EPS)) as f32).collect();
    let centered_content = centered_f32(content.data(), c, &side.mean);
    let p = prep.rows(pool);
    let (w_cos, w_guide) = weights(cfg, guide.is_some());

    let fill = |i0: usize, i1: usize, out: &mut [f32]| {
        let rows = i1 - i0;
        let mut q = vec![0.0f32; rows * c];
        let mut tmp = vec![0.0f32; rows * n];
        out.fill(0.0);
        for (cnb, pnb) in content_nb.iter().zip(&pool_nb) {
            for i in i0..i1 {
                let src = &centered_content[cnb[i] as usize * c..][..c];
                let inv = 1.0 / content_norms[i].max(EPS);
                for (d, &s) in q[(i - i0) * c..][..c].iter_mut().zip(src) {
                    *d = (s as f64 * inv) as f32;
                }
            }
            similarity_block(&q, c, p, c, n, 0..c, 0, rows, 0.0, &mut tmp);
            for ii in 0..rows {
                let t = &tmp[ii * n..(ii + 1) * n];
                let dst = &mut out[ii * n..(ii + 1) * n];
                for (j, d) in dst.iter_mut().enumerate() {
                    *d += t[pnb[j] as usize];
                }
            }
        }
    };
    let exact = |i: usize, j: usize| {
        let mut dot = 0.0f64;
        for (cnb, pnb) in content_nb.iter().zip(&pool_nb) {
            let a = content.row(cnb[i] as usize);
            let b = pool.row(pnb[j] as usize);
            for k in 0..c {
                dot += (a[k] as f64 - side.mean[k]) * (b[k] as f64 - prep.mean[k]);
            }
        }
        let mut v = w_cos as f64 * (1.0 - dot / (content_norms[i].max(EPS) * pool_norms[j].max(EPS)));
        if let Some(g) = guide {
            let gc = pool.guide_channels();
            v += w_guide as f64 * ssd(&g[i * gc..(i + 1) * gc], pool.guide_row(j));
        }
        v
    };
    let idx = Search {
        queries: cells,
        pool_rows: n,
        fill: &fill,
        pool_inv: &pool_inv,
        guides: guide.map(|g| GuidePair {
            content: g,
            pool: pool.guides(),
            channels: pool.guide_channels(),
        }),
        w_cos,
        w_guide,
        exact: &exact,
        chunk_rows: cfg.chunk_rows,
    }
    .run();

    // Every window votes its pool patch onto the cells it covers.
    let mut acc = vec![0.0f64; cells * c];
    let mut count = vec![0u32; cells];
    for (i, &j) in idx.iter().enumerate() {
        let (y, x) = ((i / gw) as isize, (i % gw) as isize);
        for (o, &(dy, dx)) in offsets.iter().enumerate() {
            let (ty, tx) = (y + dy, x + dx);
            if ty < 0 || tx < 0 || ty >= gh as isize || tx >= gw as isize {
                continue;
            }
            let t = ty as usize * gw + tx as usize;
            let src = pool.row(pool_nb[o][j as usize] as usize);
            for (a, &v) in acc[t * c..(t + 1) * c].iter_mut().zip(src) {
                *a += v as f64;
            }
            count[t] += 1;
        }
    }
    let data = acc
        .chunks(c)
        .zip(&count)
        .flat_map(|(row, &k)| row.iter().map(move |&v| (v / k as f64) as f32))
        .collect();
    Ok(MatchResult {
        mode: MatchMode::Patch(size),
        indices: MatchIndices::Rows(idx),
        target: Hypercolumns::new(gh, gw, content.layout().clone(), data)?,
    })
}

/// Norm of the flattened, centered patch, accumulated in window order.
fn patch_norm<'a>(rows: impl Iterator<Item = &'a [f32]>, mean: &[f64]) -> f64 {
    let mut s = 0.0f64;
    for row in rows {
        for (&x, &m) in row.iter().zip(mean) {
            let d = x as f64 - m;
            s += d * d;
        }
    }
    s.sqrt()
}
