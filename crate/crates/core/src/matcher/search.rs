//! Chunked nearest-neighbour search shared by every matching mode.
//!
//! Candidate scores come from an f32 similarity GEMM. All candidates within a
//! small margin of the best f32 score are then rescored in f64 from the raw
//! features, so the argmin agrees with a direct double-precision evaluation
//! even when float32 rounding reorders near-ties.

use rayon::prelude::*;

use crate::nn::gemm::{gemm, MatRef};

/// Cap on exact rescoring per query row.
pub(crate) const MAX_RESCORE: usize = 64;

/// Width of the f32 near-tie window per unit weight.
const MARGIN: f32 = 2e-4;

pub(crate) struct GuidePair<'a> {
    pub content: &'a [f32],
    pub pool: &'a [f32],
    pub channels: usize,
}

pub(crate) struct Search<'a> {
    pub queries: usize,
    pub pool_rows: usize,
    /// Writes raw similarities for query rows `[i0, i1)` into a
    /// `(i1 - i0) x pool_rows` buffer.
    pub fill: &'a (dyn Fn(usize, usize, &mut [f32]) + Sync),
    /// Inverse pool norms, multiplied onto each similarity column.
    pub pool_inv: &'a [f32],
    pub guides: Option<GuidePair<'a>>,
    pub w_cos: f32,
    pub w_guide: f32,
    /// Exact combined objective for `(query, pool row)`.
    pub exact: &'a (dyn Fn(usize, usize) -> f64 + Sync),
    pub chunk_rows: usize,
}

impl Search<'_> {
    pub fn run(&self) -> Vec<u32> {
        let n = self.pool_rows;
        let chunk = self.chunk_rows.max(1);
        let threads = rayon::current_num_threads().max(1);
        let mut out = Vec::with_capacity(self.queries);
        let mut buf = Vec::new();
        for c0 in (0..self.queries).step_by(chunk) {
            let c1 = (c0 + chunk).min(self.queries);
            let rows = c1 - c0;
            buf.resize(rows * n, 0.0);
            let sub = rows.div_ceil(threads);
            let parts: Vec<Vec<u32>> = buf[..rows * n]
                .par_chunks_mut(sub * n)
                .enumerate()
                .map(|(b, block)| {
                    let i0 = c0 + b * sub;
                    let i1 = i0 + block.len() / n;
                    (self.fill)(i0, i1, block);
                    (i0..i1).map(|i| self.pick(i, &mut block[(i - i0) * n..(i - i0 + 1) * n])).collect()
                })
                .collect();
            parts.into_iter().for_each(|p| out.extend(p));
        }
        out
    }

    fn pick(&self, i: usize, scores: &mut [f32]) -> u32 {
        let w_cos = self.w_cos;
        for (j, s) in scores.iter_mut().enumerate() {
            let mut v = w_cos * (1.0 - *s * self.pool_inv[j]);
            if let Some(g) = &self.guides {
                let a = &g.content[i * g.channels..(i + 1) * g.channels];
                let b = &g.pool[j * g.channels..(j + 1) * g.channels];
                let ssd: f32 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                v += self.w_guide * ssd;
            }
            *s = v;
        }
        let best = scores.iter().copied().fold(f32::INFINITY, f32::min);
        let margin = MARGIN * self.w_cos + 1e-5 * self.w_guide + 1e-6 * best.abs();
        let mut cands: Vec<(f32, u32)> = scores
            .iter()
            .enumerate()
            .filter(|(_, &v)| v <= best + margin || v.is_nan())
            .map(|(j, &v)| (v, j as u32))
            .collect();
        if cands.len() == 1 {
            return cands[0].1;
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        cands.truncate(MAX_RESCORE);
        let mut best_j = cands[0].1;
        let mut best_v = f64::INFINITY;
        for &(_, j) in &cands {
            let v = (self.exact)(i, j as usize);
            if v < best_v || (v == best_v && j < best_j) {
                best_v = v;
                best_j = j;
            }
        }
        best_j
    }
}

/// `out += q * p^T` for `q` rows `[i0, i1)` and all pool rows, both given as
/// row-major matrices with strides, restricted to columns `cols`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn similarity_block(
    q: &[f32],
    q_stride: usize,
    p: &[f32],
    p_stride: usize,
    p_rows: usize,
    cols: std::ops::Range<usize>,
    i0: usize,
    i1: usize,
    beta: f32,
    out: &mut [f32],
) {
    let a = MatRef {
        data: &q[i0 * q_stride + cols.start..],
        rows: i1 - i0,
        cols: cols.len(),
        rs: q_stride,
        cs: 1,
    };
    let b = MatRef {
        data: &p[cols.start..],
        rows: cols.len(),
        cols: p_rows,
        rs: 1,
        cs: p_stride,
    };
    gemm(a, b, beta, out, p_rows);
}
