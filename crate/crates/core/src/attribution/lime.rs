use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use super::{Classifier, LimeConfig, OperatorKind, SaliencyMap, Signedness};
use crate::error::{Error, Result};

/// Binary segment masks (row 0 keeps everything) and their kernel weights.
#[derive(Clone, Debug, PartialEq)]
pub struct LimeDesign {
    pub masks: DMatrix<f64>,
    pub weights: Vec<f64>,
}

pub fn lime_design(n_segments: usize, config: &LimeConfig, rng: &mut impl Rng) -> LimeDesign {
    let rows = config.n_perturbations;
    let mut masks = DMatrix::from_element(rows, n_segments, 1.0);
    for i in 1..rows {
        for j in 0..n_segments {
            masks[(i, j)] = if rng.random::<bool>() { 1.0 } else { 0.0 };
        }
    }
    let weights = (0..rows)
        .map(|i| {
            let masked = masks.row(i).iter().filter(|&&z| z == 0.0).count();
            let d = masked as f64 / n_segments as f64;
            (-(d * d) / (config.kernel_width * config.kernel_width)).exp()
        })
        .collect();
    LimeDesign { masks, weights }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RidgeFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

/// Minimises `Σ w_i (y_i − b − z_iᵀβ)² + λ‖β‖²` with the intercept unpenalised.
pub fn weighted_ridge(z: &DMatrix<f64>, y: &[f64], w: &[f64], lambda: f64) -> Result<RidgeFit> {
    let (n, p) = z.shape();
    if y.len() != n || w.len() != n {
        return Err(Error::Shape { expected: n, actual: y.len().min(w.len()) });
    }
    if (1..n).all(|i| z.row(i) == z.row(0)) {
        return Err(Error::Numerical("degenerate LIME design: all masks identical".into()));
    }
    let wsum: f64 = w.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::Numerical("LIME kernel weights sum to zero".into()));
    }
    let zbar: Vec<f64> = (0..p).map(|j| (0..n).map(|i| w[i] * z[(i, j)]).sum::<f64>() / wsum).collect();
    let ybar = (0..n).map(|i| w[i] * y[i]).sum::<f64>() / wsum;
    let mut a = DMatrix::from_element(p, p, 0.0);
    let mut rhs = DVector::from_element(p, 0.0);
    for i in 0..n {
        for j in 0..p {
            let zj = z[(i, j)] - zbar[j];
            rhs[j] += w[i] * zj * (y[i] - ybar);
            for k in 0..p {
                a[(j, k)] += w[i] * zj * (z[(i, k)] - zbar[k]);
            }
        }
    }
    for j in 0..p {
        a[(j, j)] += lambda;
    }
    let beta = match a.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => a.lu().solve(&rhs).ok_or_else(|| Error::Numerical("singular LIME normal equations".into()))?,
    };
    let intercept = ybar - (0..p).map(|j| zbar[j] * beta[j]).sum::<f64>();
    Ok(RidgeFit { intercept, coef: beta.iter().copied().collect() })
}

/// LIME surrogate coefficients broadcast over each segment.
pub fn lime<M: Classifier + ?Sized>(
    model: &M,
    x: &[f64],
    c: usize,
    config: &LimeConfig,
    rng: &mut impl Rng,
) -> Result<SaliencyMap> {
    let n = x.len();
    if n != model.input_len() {
        return Err(Error::Shape { expected: model.input_len(), actual: n });
    }
    if config.segment_width == 0 || !n.is_multiple_of(config.segment_width) {
        return Err(Error::Config(format!("segment width {} does not divide {n}", config.segment_width)));
    }
    let segments = n / config.segment_width;
    let design = lime_design(segments, config, rng);
    let y: Vec<f64> = (0..config.n_perturbations)
        .into_par_iter()
        .map(|i| {
            let mut xp = x.to_vec();
            for j in 0..segments {
                if design.masks[(i, j)] == 0.0 {
                    xp[j * config.segment_width..(j + 1) * config.segment_width].fill(config.fill);
                }
            }
            model.probs(&xp)[c]
        })
        .collect();
    let fit = weighted_ridge(&design.masks, &y, &design.weights, config.ridge)?;
    let values = (0..n).map(|t| fit.coef[t / config.segment_width]).collect();
    Ok(SaliencyMap { values, signedness: Signedness::Signed, operator: OperatorKind::Lime, class: c })
}
