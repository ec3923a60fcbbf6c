//! Mean cosine similarity between current and target features, negated.

use crate::error::{Error, Result};
use crate::extractor::{Extractor, Hypercolumns};
use crate::imaging::pyramid::{collapse_adjoint, collapse_tensor_pyramid};
use crate::imaging::LaplacianPyramid;
use crate::tensor::Tensor3;

const EPS: f64 = 1e-8;

/// `-(1/P) sum_i cos(features_i, target_i)` and its gradient w.r.t.
/// `features`.
pub fn cosine_objective(features: &Hypercolumns, target: &Hypercolumns) -> Result<(f64, Hypercolumns)> {
    if features.grid_h() != target.grid_h()
        || features.grid_w() != target.grid_w()
        || features.channels() != target.channels()
    {
        return Err(Error::shape(format!(
            "features are {}x{}x{}, target is {}x{}x{}",
            features.grid_h(),
            features.grid_w(),
            features.channels(),
            target.grid_h(),
            target.grid_w(),
            target.channels()
        )));
    }
    let p = features.cells();
    let scale = -1.0 / p as f64;
    let mut grad = Hypercolumns::zeros(features.grid_h(), features.grid_w(), features.layout().clone());
    let mut total = 0.0f64;
    for i in 0..p {
        let (a, b) = (features.row(i), target.row(i));
        let (mut dot, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
        for k in 0..a.len() {
            let (x, y) = (a[k] as f64, b[k] as f64);
            dot += x * y;
            aa += x * x;
            bb += y * y;
        }
        let (na, nb) = (aa.sqrt(), bb.sqrt());
        let (da, db) = (na.max(EPS), nb.max(EPS));
        total += dot / (da * db);
        // d cos / d a = b / (da db) - [na > eps] (a.b) a / (na^3 db)
        let cb = scale / (da * db);
        let ca = if na > EPS { -scale * dot / (na * na * na * db) } else { 0.0 };
        for (g, (&x, &y)) in grad.row_mut(i).iter_mut().zip(a.iter().zip(b)) {
            *g = (cb * y as f64 + ca * x as f64) as f32;
        }
    }
    Ok((total * scale, grad))
}

/// Objective of the image `x` against `target`.
pub fn objective(x: &Tensor3, target: &Hypercolumns, extractor: &Extractor) -> Result<f64> {
    let features = extractor.hypercolumns_tensor(x)?;
    Ok(cosine_objective(&features, target)?.0)
}

/// Objective and its gradient w.r.t. the pixels of `x`.
pub fn objective_and_grad(x: &Tensor3, target: &Hypercolumns, extractor: &Extractor) -> Result<(f64, Tensor3)> {
    let (features, tape) = extractor.forward_with_tape(x)?;
    let (loss, cot) = cosine_objective(&features, target)?;
    Ok((loss, extractor.backward(&tape, &cot)?))
}

/// Objective of the collapsed pyramid and its gradient w.r.t. every
/// pyramid coefficient.
pub fn objective_and_pyramid_grad(
    pyr: &LaplacianPyramid,
    target: &Hypercolumns,
    extractor: &Extractor,
) -> Result<(f64, LaplacianPyramid)> {
    let x = collapse_tensor_pyramid(pyr);
    let (loss, g) = objective_and_grad(&x, target, extractor)?;
    Ok((loss, collapse_adjoint(&g, pyr)))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::extractor::LayerLayout;

    fn hyper(data: Vec<f32>, c: usize) -> Hypercolumns {
        let layout = Arc::new(LayerLayout::new([("x".to_string(), c)]));
        let cells = data.len() / c;
        Hypercolumns::new(1, cells, layout, data).unwrap()
    }

    #[test]
    fn parallel_features_give_minus_one() {
        let f = hyper(vec![1.0, 2.0, 0.5, 0.0, 3.0, 1.0], 3);
        let t = hyper(vec![2.0, 4.0, 1.0, 0.0, 0.3, 0.1], 3);
        let (loss, _) = cosine_objective(&f, &t).unwrap();
        assert!((loss + 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_features_give_zero() {
        let f = hyper(vec![1.0, 0.0, 0.0, 1.0], 2);
        let t = hyper(vec![0.0, 1.0, 1.0, 0.0], 2);
        assert_eq!(cosine_objective(&f, &t).unwrap().0, 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = vec![0.3, -0.2, 0.9, 0.1, 0.4, 0.7, -0.5, 0.2];
        let t = hyper(vec![0.5, 0.1, -0.3, 0.8, 0.2, 0.2, 0.6, -0.1], 4);
        let (_, g) = cosine_objective(&hyper(data.clone(), 4), &t).unwrap();
        let eval = |d: &[f32]| -> f64 {
            let mut total = 0.0;
            for i in 0..2 {
                let a: Vec<f64> = d[i * 4..i * 4 + 4].iter().map(|&v| v as f64).collect();
                let b: Vec<f64> = t.row(i).iter().map(|&v| v as f64).collect();
                let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                total += dot / (na * nb);
            }
            -total / 2.0
        };
        for k in 0..8 {
            let h = 1e-3f32;
            let mut up = data.clone();
            up[k] += h;
            let mut dn = data.clone();
            dn[k] -= h;
            let fd = (eval(&up) - eval(&dn)) / (2.0 * h as f64);
            assert!((fd - g.data()[k] as f64).abs() < 1e-5, "{k}: {fd} vs {}", g.data()[k]);
        }
    }

    #[test]
    fn zero_features_are_guarded() {
        let f = hyper(vec![0.0; 4], 2);
        let t = hyper(vec![1.0, 0.0, 0.0, 1.0], 2);
        let (loss, g) = cosine_objective(&f, &t).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.is_finite());
    }
}
