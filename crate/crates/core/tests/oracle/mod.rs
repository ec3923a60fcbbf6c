//! Independent reference implementations for integration and acceptance
//! tests. Everything here is written from the definitions, in f64, with
//! plain loops, and shares no numeric code with the library.

#![allow(dead_code)]

use std::sync::Arc;

use nnst::extractor::{ExtractorWeights, Hypercolumns, LayerLayout, PoolOptions, StylePool};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- matching

/// `1 - <a - ma, b - mb> / (max(|a - ma|, eps) max(|b - mb|, eps))`.
pub fn cos_dist(a: &[f32], ma: &[f64], b: &[f32], mb: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for k in 0..a.len() {
        let x = a[k] as f64 - ma[k];
        let y = b[k] as f64 - mb[k];
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    1.0 - dot / (na.sqrt().max(EPS) * nb.sqrt().max(EPS))
}

pub fn ssd(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum()
}

pub fn mean(rows: &[&[f32]], dims: usize) -> Vec<f64> {
    let mut m = vec![0.0; dims];
    for r in rows {
        for k in 0..dims {
            m[k] += r[k] as f64;
        }
    }
    m.iter_mut().for_each(|v| *v /= rows.len() as f64);
    m
}

/// Whether `chosen` is an acceptable argmin of `d`: it must be within
/// rounding of the minimum, and on bitwise-exact ties it must be the lowest
/// index.
pub fn acceptable_choice(d: &[f64], chosen: usize) -> bool {
    let best = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * best.abs().max(1.0);
    let near: Vec<usize> = (0..d.len()).filter(|&j| d[j] <= best + tol).collect();
    if !near.contains(&chosen) {
        return false;
    }
    if near.iter().all(|&j| d[j] == d[near[0]]) {
        return chosen == near[0];
    }
    true
}

/// Index of the first minimum.
pub fn first_argmin(d: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..d.len() {
        if d[j] < d[best] {
            best = j;
        }
    }
    best
}

/// A random matching problem: content grid, per-rotation style grids and
/// optional guides.
pub struct MatchInstance {
    pub layout: Arc<LayerLayout>,
    pub content: Hypercolumns,
    pub parts: Vec<Hypercolumns>,
    pub guide_channels: usize,
    pub content_guide: Vec<f32>,
    pub part_guides: Vec<Vec<f32>>,
}

fn random_row(rng: &mut ChaCha8Rng, dims: usize) -> Vec<f32> {
    (0..dims)
        .map(|_| {
            // Roughly half zeros, like post-ReLU features.
            let v: f32 = rng.random_range(-1.0..1.5);
            if v < 0.0 && rng.random_bool(0.8) {
                0.0
            } else {
                v.abs()
            }
        })
        .collect()
}

impl MatchInstance {
    /// Up to 64 content cells, up to 64 pool rows, up to 16 dims.
    /// `min_side` bounds every grid side from below (3 for patch matching).
    pub fn random(rng: &mut ChaCha8Rng, guided: bool, min_side: usize) -> Self {
        let dims = rng.random_range(2..=16usize);
        let layers = rng.random_range(1..=dims.min(3));
        let mut cuts: Vec<usize> = (1..dims).collect();
        while cuts.len() > layers - 1 {
            let i = rng.random_range(0..cuts.len());
            cuts.remove(i);
        }
        let mut bounds = vec![0];
        bounds.extend(cuts);
        bounds.push(dims);
        let layout = Arc::new(LayerLayout::new(
            bounds.windows(2).enumerate().map(|(i, w)| (format!("l{i}"), w[1] - w[0])),
        ));

        let side = |rng: &mut ChaCha8Rng, max_cells: usize| {
            let h = rng.random_range(min_side..=8.min(max_cells / min_side).max(min_side));
            let w = rng.random_range(min_side..=(max_cells / h).clamp(min_side, 8));
            (h, w)
        };
        let (ch, cw) = side(rng, 64);
        let rotations = rng.random_range(1..=4usize);
        let mut budget = 64;
        let mut parts = Vec::new();
        let mut rows_so_far: Vec<Vec<f32>> = Vec::new();
        for _ in 0..rotations {
            if budget < min_side * min_side {
                break;
            }
            let (h, w) = side(rng, budget);
            budget -= h * w;
            let mut data = Vec::with_capacity(h * w * dims);
            for _ in 0..h * w {
                // Occasional exact duplicates exercise tie-breaking.
                let row = if !rows_so_far.is_empty() && rng.random_bool(0.1) {
                    rows_so_far[rng.random_range(0..rows_so_far.len())].clone()
                } else {
                    random_row(rng, dims)
                };
                data.extend_from_slice(&row);
                rows_so_far.push(row);
            }
            parts.push(Hypercolumns::new(h, w, layout.clone(), data).unwrap());
        }
        let mut cdata = Vec::with_capacity(ch * cw * dims);
        for _ in 0..ch * cw {
            cdata.extend(random_row(rng, dims));
        }
        let content = Hypercolumns::new(ch, cw, layout.clone(), cdata).unwrap();

        let guide_channels = if guided { rng.random_range(1..=3) } else { 0 };
        let mut g = |n: usize| -> Vec<f32> { (0..n * guide_channels).map(|_| rng.random_range(0.0..1.0)).collect() };
        let content_guide = g(content.cells());
        let part_guides = parts.iter().map(|p| g(p.cells())).collect();
        Self {
            layout,
            content,
            parts,
            guide_channels,
            content_guide,
            part_guides,
        }
    }

    pub fn pool(&self) -> StylePool {
        let parts = self
            .parts
            .iter()
            .zip(&self.part_guides)
            .map(|(p, g)| (p.clone(), (self.guide_channels > 0).then(|| g.clone())))
            .collect();
        StylePool::from_parts(self.layout.clone(), parts, self.guide_channels, PoolOptions::default()).unwrap()
    }

    /// Pool rows in concatenation order with (part, y, x).
    pub fn pool_cells(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (k, p) in self.parts.iter().enumerate() {
            for y in 0..p.grid_h() {
                for x in 0..p.grid_w() {
                    out.push((k, y, x));
                }
            }
        }
        out
    }

    pub fn pool_row(&self, cell: (usize, usize, usize)) -> &[f32] {
        let p = &self.parts[cell.0];
        p.row(cell.1 * p.grid_w() + cell.2)
    }

    pub fn pool_guide(&self, cell: (usize, usize, usize)) -> &[f32] {
        let gc = self.guide_channels;
        let i = cell.1 * self.parts[cell.0].grid_w() + cell.2;
        &self.part_guides[cell.0][i * gc..(i + 1) * gc]
    }

    fn means(&self, centered: bool) -> (Vec<f64>, Vec<f64>) {
        let dims = self.layout.channels();
        if !centered {
            return (vec![0.0; dims], vec![0.0; dims]);
        }
        let content_rows: Vec<&[f32]> = (0..self.content.cells()).map(|i| self.content.row(i)).collect();
        let cells = self.pool_cells();
        let pool_rows: Vec<&[f32]> = cells.iter().map(|&c| self.pool_row(c)).collect();
        (mean(&content_rows, dims), mean(&pool_rows, dims))
    }

    /// Per content cell, the objective against every pool row for the
    /// whole hypercolumn (`layer = None`) or one layer's slice.
    pub fn distances(&self, layer: Option<usize>, centered: bool, weights: Option<(f64, f64)>) -> Vec<Vec<f64>> {
        let (mc, mp) = self.means(centered);
        let r = match layer {
            None => 0..self.layout.channels(),
            Some(l) => self.layout.ranges()[l].clone(),
        };
        let cells = self.pool_cells();
        let gc = self.guide_channels;
        (0..self.content.cells())
            .map(|i| {
                let a = &self.content.row(i)[r.clone()];
                cells
                    .iter()
                    .map(|&pc| {
                        let d = cos_dist(a, &mc[r.clone()], &self.pool_row(pc)[r.clone()], &mp[r.clone()]);
                        match weights {
                            None => d,
                            Some((wc, wg)) => {
                                wc * d + wg * ssd(&self.content_guide[i * gc..(i + 1) * gc], self.pool_guide(pc))
                            }
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Flattened `k x k` window around a content cell with replicate padding.
    fn content_window(&self, i: usize, k: usize) -> Vec<f32> {
        let (h, w) = (self.content.grid_h() as isize, self.content.grid_w() as isize);
        let (y, x) = ((i as isize) / w, (i as isize) % w);
        let r = (k / 2) as isize;
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let yy = (y + dy).clamp(0, h - 1);
                let xx = (x + dx).clamp(0, w - 1);
                out.extend_from_slice(self.content.row((yy * w + xx) as usize));
            }
        }
        out
    }

    /// Pool cell reached from `cell` by `(dy, dx)` with replicate padding.
    pub fn pool_neighbor(&self, cell: (usize, usize, usize), dy: isize, dx: isize) -> (usize, usize, usize) {
        let p = &self.parts[cell.0];
        let yy = (cell.1 as isize + dy).clamp(0, p.grid_h() as isize - 1) as usize;
        let xx = (cell.2 as isize + dx).clamp(0, p.grid_w() as isize - 1) as usize;
        (cell.0, yy, xx)
    }

    fn pool_window(&self, cell: (usize, usize, usize), k: usize) -> Vec<f32> {
        let r = (k / 2) as isize;
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                out.extend_from_slice(self.pool_row(self.pool_neighbor(cell, dy, dx)));
            }
        }
        out
    }

    /// Patch objective for every (content cell, pool row).
    pub fn patch_distances(&self, k: usize, centered: bool, weights: Option<(f64, f64)>) -> Vec<Vec<f64>> {
        let (mc, mp) = self.means(centered);
        let tile = |m: &[f64]| -> Vec<f64> { (0..k * k).flat_map(|_| m.iter().cloned()).collect() };
        let (mc, mp) = (tile(&mc), tile(&mp));
        let cells = self.pool_cells();
        let windows: Vec<Vec<f32>> = cells.iter().map(|&c| self.pool_window(c, k)).collect();
        let gc = self.guide_channels;
        (0..self.content.cells())
            .map(|i| {
                let a = self.content_window(i, k);
                cells
                    .iter()
                    .zip(&windows)
                    .map(|(&pc, b)| {
                        let d = cos_dist(&a, &mc, b, &mp);
                        match weights {
                            None => d,
                            Some((wc, wg)) => {
                                wc * d + wg * ssd(&self.content_guide[i * gc..(i + 1) * gc], self.pool_guide(pc))
                            }
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Target from patch indices: every window votes its pool patch onto the
    /// in-bounds cells it covers; votes are averaged.
    pub fn patch_target(&self, indices: &[u32], k: usize) -> Vec<f64> {
        let (h, w) = (self.content.grid_h() as isize, self.content.grid_w() as isize);
        let dims = self.layout.channels();
        let cells = self.pool_cells();
        let r = (k / 2) as isize;
        let mut acc = vec![0.0; (h * w) as usize * dims];
        let mut count = vec![0.0; (h * w) as usize];
        for (i, &j) in indices.iter().enumerate() {
            let (y, x) = (i as isize / w, i as isize % w);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (ty, tx) = (y + dy, x + dx);
                    if ty < 0 || tx < 0 || ty >= h || tx >= w {
                        continue;
                    }
                    let t = (ty * w + tx) as usize;
                    let src = self.pool_row(self.pool_neighbor(cells[j as usize], dy, dx));
                    for c in 0..dims {
                        acc[t * dims + c] += src[c] as f64;
                    }
                    count[t] += 1.0;
                }
            }
        }
        for t in 0..count.len() {
            for c in 0..dims {
                acc[t * dims + c] /= count[t];
            }
        }
        acc
    }
}

// ------------------------------------------------------- f64 toy extractor

const MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Planar `(c, h, w)` f64 tensor.
#[derive(Clone, Debug)]
pub struct T64 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl T64 {
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.v[(c * self.h + y) * self.w + x]
    }
}

fn conv<W: Copy + Into<f64>>(x: &T64, cout: usize, k: usize, weight: &[W], bias: &[W]) -> T64 {
    let r = (k / 2) as isize;
    let mut v = vec![0.0; cout * x.h * x.w];
    for o in 0..cout {
        for y in 0..x.h as isize {
            for xx in 0..x.w as isize {
                let mut s: f64 = bias[o].into();
                for i in 0..x.c {
                    for ky in 0..k as isize {
                        for kx in 0..k as isize {
                            let (sy, sx) = (y + ky - r, xx + kx - r);
                            if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                continue;
                            }
                            let wi = ((o * x.c + i) * k + ky as usize) * k + kx as usize;
                            s += weight[wi].into() * x.at(i, sy as usize, sx as usize);
                        }
                    }
                }
                v[(o * x.h + y as usize) * x.w + xx as usize] = s;
            }
        }
    }
    T64 { c: cout, h: x.h, w: x.w, v }
}

fn pool2(x: &T64) -> T64 {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut v = vec![0.0; x.c * h * w];
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|&(dy, dx)| x.at(c, 2 * y + dy, 2 * xx + dx))
                    .fold(f64::NEG_INFINITY, f64::max);
                v[(c * h + y) * w + xx] = m;
            }
        }
    }
    T64 { c: x.c, h, w, v }
}

/// Bilinear sample position with half-pixel centers, clamped at the edges.
fn taps(input: usize, output: usize, i: usize) -> (usize, usize, f64) {
    let src = ((i as f64 + 0.5) * input as f64 / output as f64 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(input - 1);
    let i1 = (i0 + 1).min(input - 1);
    (i0, i1, if i0 == i1 { 0.0 } else { src - i0 as f64 })
}

pub fn resize64(x: &T64, h: usize, w: usize) -> T64 {
    let mut v = vec![0.0; x.c * h * w];
    for c in 0..x.c {
        for y in 0..h {
            let (y0, y1, fy) = taps(x.h, h, y);
            for xx in 0..w {
                let (x0, x1, fx) = taps(x.w, w, xx);
                let top = (1.0 - fx) * x.at(c, y0, x0) + fx * x.at(c, y0, x1);
                let bot = (1.0 - fx) * x.at(c, y1, x0) + fx * x.at(c, y1, x1);
                v[(c * h + y) * w + xx] = (1.0 - fy) * top + fy * bot;
            }
        }
    }
    T64 { c: x.c, h, w, v }
}

/// Post-ReLU hypercolumns of every layer of `weights` at `(h/4, w/4)`,
/// cell-major. The pool after the last layer is not applied.
pub fn hypercolumns64(weights: &ExtractorWeights, img: &T64) -> Vec<f64> {
    let mut x = img.clone();
    for c in 0..3 {
        for v in &mut x.v[c * img.h * img.w..(c + 1) * img.h * img.w] {
            *v = (*v - MEAN[c]) / STD[c];
        }
    }
    let (gh, gw) = (img.h / 4, img.w / 4);
    let layers = weights.layers();
    let mut taps_out = Vec::new();
    for (i, l) in layers.iter().enumerate() {
        let mut y = conv(&x, l.conv.out_channels, l.conv.kernel, &l.conv.weight, &l.conv.bias);
        y.v.iter_mut().for_each(|v| *v = v.max(0.0));
        taps_out.push(resize64(&y, gh, gw));
        x = if l.pool_after && i + 1 < layers.len() { pool2(&y) } else { y };
    }
    let total: usize = taps_out.iter().map(|t| t.c).sum();
    let mut out = vec![0.0; gh * gw * total];
    for cell in 0..gh * gw {
        let mut off = 0;
        for t in &taps_out {
            for c in 0..t.c {
                out[cell * total + off + c] = t.v[c * gh * gw + cell];
            }
            off += t.c;
        }
    }
    out
}

/// `-(1/P) sum_i cos(f_i, t_i)` with the same epsilon guard.
pub fn cosine_objective64(f: &[f64], t: &[f32], dims: usize) -> f64 {
    let cells = f.len() / dims;
    let mut s = 0.0;
    for i in 0..cells {
        let (a, b) = (&f[i * dims..(i + 1) * dims], &t[i * dims..(i + 1) * dims]);
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * *y as f64).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|y| (*y as f64).powi(2)).sum::<f64>().sqrt();
        s += dot / (na.max(EPS) * nb.max(EPS));
    }
    -s / cells as f64
}

// ------------------------------------------------------- f64 toy decoder

/// One decoder convolution with f64 parameters.
#[derive(Clone, Debug)]
pub struct Conv64 {
    pub cout: usize,
    pub k: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Planar copy of cell-major features.
pub fn planar64(rows: &[f32], gh: usize, gw: usize) -> T64 {
    let c = rows.len() / (gh * gw);
    let mut v = vec![0.0; rows.len()];
    for cell in 0..gh * gw {
        for k in 0..c {
            v[k * gh * gw + cell] = rows[cell * c + k] as f64;
        }
    }
    T64 { c, h: gh, w: gw, v }
}

fn depth_to_space64(x: &T64, r: usize) -> T64 {
    let c = x.c / (r * r);
    let (h, w) = (x.h * r, x.w * r);
    let mut v = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                v[(ch * h + y) * w + xx] = x.at(ch * r * r + (y % r) * r + xx % r, y / r, xx / r);
            }
        }
    }
    T64 { c, h, w, v }
}

/// Four pyramid levels, finest first. `convs` holds, per branch, five
/// layers followed by the residual convolution.
pub fn decoder_levels64(convs: &[Conv64], t: &T64) -> Vec<T64> {
    let outs: Vec<T64> = convs
        .chunks(6)
        .map(|b| {
            let mut cur = t.clone();
            for (l, c) in b[..5].iter().enumerate() {
                let mut y = conv(&cur, c.cout, c.k, &c.w, &c.b);
                if l < 4 {
                    y.v.iter_mut().for_each(|v| {
                        if *v < 0.0 {
                            *v *= 0.2
                        }
                    });
                } else {
                    let r = conv(t, b[5].cout, b[5].k, &b[5].w, &b[5].b);
                    y.v.iter_mut().zip(&r.v).for_each(|(a, b)| *a += b);
                }
                cur = y;
            }
            cur
        })
        .collect();
    vec![
        depth_to_space64(&outs[0], 4),
        depth_to_space64(&outs[1], 2),
        outs[2].clone(),
        resize64(&outs[3], t.h / 2, t.w / 2),
    ]
}

pub fn collapse64(levels: &[T64]) -> T64 {
    let mut acc = levels.last().unwrap().clone();
    for l in levels.iter().rev().skip(1) {
        let mut up = resize64(&acc, l.h, l.w);
        up.v.iter_mut().zip(&l.v).for_each(|(a, b)| *a += b);
        acc = up;
    }
    acc
}

/// `L_r + L_cycle` evaluated entirely in f64.
pub fn decoder_loss64(
    convs: &[Conv64],
    style_features: &T64,
    style_levels: &[T64],
    target: &T64,
    target_rows: &[f32],
    extractor: &ExtractorWeights,
) -> f64 {
    let l_r: f64 = decoder_levels64(convs, style_features)
        .iter()
        .zip(style_levels)
        .map(|(p, s)| p.v.iter().zip(&s.v).map(|(a, b)| (a - b).abs()).sum::<f64>() / (s.h * s.w) as f64)
        .sum();
    let img = collapse64(&decoder_levels64(convs, target));
    let f = hypercolumns64(extractor, &img);
    l_r + 1.0 + cosine_objective64(&f, target_rows, target.c)
}

// ------------------------------------------------------------------ color

/// Joint bilateral filter by direct summation over the truncated window.
pub fn bilateral_naive(
    a: &[f32],
    b: &[f32],
    guide: &[f32],
    h: usize,
    w: usize,
    sigma_s: f64,
    sigma_r: f64,
) -> (Vec<f64>, Vec<f64>) {
    let r = (2.0 * sigma_s).ceil() as isize;
    let mut oa = vec![0.0; h * w];
    let mut ob = vec![0.0; h * w];
    for py in 0..h as isize {
        for px in 0..w as isize {
            let p = (py * w as isize + px) as usize;
            let (mut sw, mut sa, mut sb) = (0.0, 0.0, 0.0);
            for qy in 0..h as isize {
                for qx in 0..w as isize {
                    let (dy, dx) = (qy - py, qx - px);
                    if dy.abs() > r || dx.abs() > r {
                        continue;
                    }
                    let q = (qy * w as isize + qx) as usize;
                    let dg = guide[q] as f64 - guide[p] as f64;
                    let e = -((dy * dy + dx * dx) as f64) / (2.0 * sigma_s * sigma_s) - dg * dg / (2.0 * sigma_r * sigma_r);
                    let wgt = e.exp();
                    sw += wgt;
                    sa += wgt * a[q] as f64;
                    sb += wgt * b[q] as f64;
                }
            }
            oa[p] = sa / sw;
            ob[p] = sb / sw;
        }
    }
    (oa, ob)
}

/// Mean and population covariance of 3-vectors.
pub fn moments(points: &[[f64; 3]]) -> ([f64; 3], [[f64; 3]; 3]) {
    let n = points.len() as f64;
    let mut m = [0.0; 3];
    for p in points {
        for c in 0..3 {
            m[c] += p[c] / n;
        }
    }
    let mut cov = [[0.0; 3]; 3];
    for p in points {
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] += (p[r] - m[r]) * (p[c] - m[c]) / n;
            }
        }
    }
    (m, cov)
}
