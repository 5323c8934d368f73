use super::{Classifier, OcclusionConfig, OperatorKind, SaliencyMap, Signedness};
use crate::error::{Error, Result};

/// Window start positions `0, stride, …` up to `n - window`.
pub fn window_starts(n: usize, window: usize, stride: usize) -> Vec<usize> {
    if window == 0 || window > n || stride == 0 {
        return Vec::new();
    }
    (0..=n - window).step_by(stride).collect()
}

/// Number of windows covering each position.
pub fn occlusion_coverage(n: usize, window: usize, stride: usize) -> Vec<usize> {
    let mut cover = vec![0usize; n];
    for k in window_starts(n, window, stride) {
        cover[k..k + window].iter_mut().for_each(|c| *c += 1);
    }
    cover
}

/// Signed occlusion map: `r[n]` is the mean probability drop over the windows covering `n`.
pub fn occlusion<M: Classifier + ?Sized>(
    model: &M,
    x: &[f64],
    c: usize,
    config: &OcclusionConfig,
) -> Result<SaliencyMap> {
    let n = x.len();
    if n != model.input_len() {
        return Err(Error::Shape { expected: model.input_len(), actual: n });
    }
    let starts = window_starts(n, config.window, config.stride);
    if starts.is_empty() {
        return Err(Error::Config(format!("occlusion window {} does not fit {n} samples", config.window)));
    }
    let p0 = model.probs(x)[c];
    let occluded = model.occluded_probs(x, c, &starts, config.window, config.fill);
    let mut sum = vec![0.0; n];
    for (&k, &p) in starts.iter().zip(&occluded) {
        let drop = p0 - p;
        sum[k..k + config.window].iter_mut().for_each(|s| *s += drop);
    }
    let cover = occlusion_coverage(n, config.window, config.stride);
    let values = sum.iter().zip(&cover).map(|(s, &k)| if k == 0 { 0.0 } else { s / k as f64 }).collect();
    Ok(SaliencyMap { values, signedness: Signedness::Signed, operator: OperatorKind::Occlusion, class: c })
}
