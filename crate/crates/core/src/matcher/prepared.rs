use rayon::prelude::*;

use crate::extractor::StylePool;

pub(crate) const EPS: f64 = 1e-8;

/// Pool data derived once per centering choice and reused across calls.
#[derive(Debug)]
pub struct PreparedPool {
    pub(crate) mean: Vec<f64>,
    /// Centered rows as f32; `None` when uncentered (raw rows are used).
    centered: Option<Vec<f32>>,
    pub(crate) norms: Vec<f64>,
    pub(crate) inv: Vec<f32>,
    /// Per-layer norms, row-major `rows x layers`.
    pub(crate) layer_norms: Vec<f64>,
    /// Per-layer inverse norms, layer-major `layers x rows`.
    pub(crate) layer_inv: Vec<f32>,
}

impl PreparedPool {
    pub(crate) fn get(pool: &StylePool, centered: bool) -> &PreparedPool {
        pool.prepared[centered as usize].get_or_init(|| Self::new(pool, centered))
    }

    fn new(pool: &StylePool, centered: bool) -> Self {
        let c = pool.channels();
        let n = pool.rows();
        let mean = if centered { pool.mean().to_vec() } else { vec![0.0; c] };
        let centered_rows = centered.then(|| centered_f32(pool.features(), c, &mean));
        let ranges = pool.layout().ranges().to_vec();
        let l = ranges.len();
        let per_row: Vec<(f64, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|r| {
                let row = pool.row(r);
                let whole = centered_norm(row, &mean);
                let layers = ranges.iter().map(|rg| centered_norm(&row[rg.clone()], &mean[rg.clone()])).collect();
                (whole, layers)
            })
            .collect();
        let norms: Vec<f64> = per_row.iter().map(|p| p.0).collect();
        let inv = norms.iter().map(|&v| (1.0 / v.max(EPS)) as f32).collect();
        let mut layer_norms = vec![0.0; n * l];
        let mut layer_inv = vec![0.0; n * l];
        for (r, (_, ls)) in per_row.iter().enumerate() {
            for (k, &v) in ls.iter().enumerate() {
                layer_norms[r * l + k] = v;
                layer_inv[k * n + r] = (1.0 / v.max(EPS)) as f32;
            }
        }
        Self {
            mean,
            centered: centered_rows,
            norms,
            inv,
            layer_norms,
            layer_inv,
        }
    }

    pub(crate) fn rows<'a>(&'a self, pool: &'a StylePool) -> &'a [f32] {
        self.centered.as_deref().unwrap_or(pool.features())
    }
}

pub(crate) fn column_mean(data: &[f32], c: usize) -> Vec<f64> {
    let rows = data.len() / c.max(1);
    let mut mean = vec![0.0f64; c];
    for r in 0..rows {
        for (m, &v) in mean.iter_mut().zip(&data[r * c..(r + 1) * c]) {
            *m += v as f64;
        }
    }
    if rows > 0 {
        mean.iter_mut().for_each(|m| *m /= rows as f64);
    }
    mean
}

pub(crate) fn centered_f32(data: &[f32], c: usize, mean: &[f64]) -> Vec<f32> {
    let mut out = vec![0.0f32; data.len()];
    out.par_chunks_mut(c.max(1))
        .zip(data.par_chunks(c.max(1)))
        .for_each(|(o, row)| {
            for k in 0..row.len() {
                o[k] = (row[k] as f64 - mean[k]) as f32;
            }
        });
    out
}

/// Euclidean norm of `row - mean`, accumulated sequentially in f64.
pub(crate) fn centered_norm(row: &[f32], mean: &[f64]) -> f64 {
    let mut s = 0.0f64;
    for (&x, &m) in row.iter().zip(mean) {
        let d = x as f64 - m;
        s += d * d;
    }
    s.sqrt()
}

/// Centered cosine distance in f64 with precomputed norms.
pub(crate) fn exact_distance(a: &[f32], ma: &[f64], na: f64, b: &[f32], mb: &[f64], nb: f64) -> f64 {
    let mut dot = 0.0f64;
    for k in 0..a.len() {
        dot += (a[k] as f64 - ma[k]) * (b[k] as f64 - mb[k]);
    }
    1.0 - dot / (na.max(EPS) * nb.max(EPS))
}

pub(crate) fn ssd(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = x as f64 - y as f64;
        s += d * d;
    }
    s
}
