use super::{OperatorKind, SaliencyMap, Signedness};
use crate::error::{Error, Result};
use crate::net::global_max;
use crate::posterior::SampledModel;

/// Conv4 feature maps and `∂logit_c/∂maps`, both channel-major.
#[derive(Clone, Debug)]
pub struct FeatureGradient {
    pub maps: Vec<f64>,
    pub len: usize,
    pub grad: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Only the arg-max position of each channel carries gradient through the global pool.
pub fn gradcam_feature_gradient(model: &SampledModel<'_>, x: &[f64], c: usize) -> Result<FeatureGradient> {
    let p = &*model.params;
    if x.len() != p.arch.input_len {
        return Err(Error::Shape { expected: p.arch.input_len, actual: x.len() });
    }
    let c4 = p.arch.channels[3];
    let (maps, len) = p.features(x);
    let (pooled, arg) = global_max(&maps, c4);
    let (logits, dpooled) = p.head_input_gradient(&pooled, model.dropout.as_deref(), c);
    let mut grad = vec![0.0; maps.len()];
    for ch in 0..c4 {
        grad[ch * len + arg[ch] as usize] = dpooled[ch];
    }
    Ok(FeatureGradient { maps, len, grad, logits })
}

/// Piecewise-linear resampling with both endpoints aligned.
pub fn interpolate_linear(v: &[f64], out_len: usize) -> Vec<f64> {
    if v.len() == 1 || out_len == 1 {
        return vec![v[0]; out_len];
    }
    let scale = (v.len() - 1) as f64 / (out_len - 1) as f64;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * scale;
            let lo = (pos.floor() as usize).min(v.len() - 2);
            let frac = pos - lo as f64;
            v[lo] * (1.0 - frac) + v[lo + 1] * frac
        })
        .collect()
}

/// Grad-CAM at the last convolution, upsampled to the input length.
pub fn gradcam(model: &SampledModel<'_>, x: &[f64], c: usize) -> Result<SaliencyMap> {
    let fg = gradcam_feature_gradient(model, x, c)?;
    let c4 = model.params.arch.channels[3];
    let l = fg.len;
    let alpha: Vec<f64> = (0..c4).map(|ch| fg.grad[ch * l..(ch + 1) * l].iter().sum::<f64>() / l as f64).collect();
    let cam: Vec<f64> =
        (0..l).map(|t| (0..c4).map(|ch| alpha[ch] * fg.maps[ch * l + t]).sum::<f64>().max(0.0)).collect();
    Ok(SaliencyMap {
        values: interpolate_linear(&cam, x.len()),
        signedness: Signedness::Nonnegative,
        operator: OperatorKind::Gradcam,
        class: c,
    })
}
